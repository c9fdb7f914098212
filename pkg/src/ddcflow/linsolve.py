"""Direct solution of one subdomain's velocity-pressure saddle system.

The block system

    [ F  -B^T ] [u]   [g]
    [ B   0   ] [p] = [0]

is solved by sparse LU after Dirichlet rows are replaced by identity
equations.  The pressure is only determined up to a constant, so one pressure
dof is pinned to zero during the solve and the constant is fixed afterwards
by removing the area-weighted mean.  Every solve is verified against a
relative residual bound; a breach raises instead of silently returning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import apply_constraints

RESIDUAL_RTOL = 1e-10


class SolverAccuracyError(Exception):
    """Raised when a direct solve fails its residual contract."""


class SingularSystemError(Exception):
    """Raised when the saddle matrix cannot be factorized."""


@dataclass
class SaddleSystem:
    """One subdomain solve: blocks, right side, constraints, pressure fixes.

    F acts on the stacked velocity (2 nu), B maps velocity to pressure test
    functions (np x 2 nu).  ``constrained_dofs`` index the stacked velocity
    vector; the pressure dof ``pin_dof`` is pinned to zero during the solve.
    ``pressure_weights`` are the P1 integrals (psi_q, 1) used to remove the
    pressure mean.
    """

    F: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    constrained_dofs: np.ndarray
    constrained_values: np.ndarray
    pressure_weights: np.ndarray
    rhs_p: np.ndarray | None = None
    pin_dof: int = 0


def enforce_pressure_mean(p: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Shift a pressure field so its area-weighted mean vanishes."""
    area = weights.sum()
    return p - (weights @ p) / area


def solve_saddle(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
    """Solve the constrained saddle system; returns (velocity, pressure).

    The pressure comes back with zero area-weighted mean.  Raises
    SolverAccuracyError when the relative residual of the constrained system
    exceeds RESIDUAL_RTOL and SingularSystemError when factorization fails.
    """
    nv = system.F.shape[0]
    npr = system.B.shape[0]
    A = sp.bmat([[system.F, -system.B.T], [system.B, None]], format="csr")
    rhs_p = system.rhs_p if system.rhs_p is not None else np.zeros(npr)
    b = np.concatenate([system.rhs_u, rhs_p])
    dofs = np.concatenate([system.constrained_dofs, [nv + system.pin_dof]])
    vals = np.concatenate([system.constrained_values, [0.0]])
    A, b = apply_constraints(A, b, dofs, vals)
    if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b))):
        raise SolverAccuracyError("assembled system contains non-finite values")
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(
            "saddle matrix is singular; this usually means missing boundary "
            f"constraints or an unpinned pressure nullspace ({exc})"
        ) from None
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverAccuracyError("solve produced non-finite values")
    res = np.abs(A @ x - b).max()
    scale = max(np.abs(b).max(), 1e-300)
    if res > RESIDUAL_RTOL * scale:
        raise SolverAccuracyError(
            f"residual {res:.3e} exceeds {RESIDUAL_RTOL:.1e} * |rhs| = {RESIDUAL_RTOL * scale:.3e}"
        )
    u = x[:nv]
    p = enforce_pressure_mean(x[nv:], system.pressure_weights)
    return u, p
