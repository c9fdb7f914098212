"""Assembly of the discrete operators.

Volume terms are integrated with a degree-6 rule (exact for every polynomial
integrand appearing here); interface terms use the Gauss points carried by
the InterfacePairing.  Velocity matrices are returned as scalar blocks: the
same block acts on the x and y components.  The convection matrix uses the
skew-symmetrized form

    c(w; u, v) = 1/2 (w . grad u, v) - 1/2 (w . grad v, u)

so that c(w; v, v) = 0 holds exactly for any advecting field w.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import FunctionSpace, _physical_points
from .mesh import InterfacePairing

VOLUME_DEGREE = 6


def _scatter(rowdofs: np.ndarray, coldofs: np.ndarray, loc: np.ndarray, shape) -> sp.csr_matrix:
    nt, nr, nc = loc.shape
    rows = np.repeat(rowdofs, nc, axis=1).ravel()
    cols = np.tile(coldofs, (1, nr)).ravel()
    return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=shape).tocsr()


def _gather_vector(space: FunctionSpace, u: np.ndarray) -> np.ndarray:
    """Per-triangle coefficients of a stacked vector field; shape (nt, nb, 2)."""
    cd = space.dofmap.cell_dofs
    n = space.ndof
    return np.stack([u[cd], u[n + cd]], axis=2)


def assemble_mass(space: FunctionSpace, coeff: float = 1.0, degree: int | None = None) -> sp.csr_matrix:
    """Scalar mass matrix coeff * (u, v)."""
    if degree is None:
        degree = max(2 * space.elem.degree, 2)
    _, phi, _, wdet = space.tabulation(degree)
    loc = coeff * np.einsum("tq,qi,qj->tij", wdet, phi, phi)
    cd = space.dofmap.cell_dofs
    return _scatter(cd, cd, loc, (space.ndof, space.ndof))


def assemble_stiffness(space: FunctionSpace, coeff: float = 1.0) -> sp.csr_matrix:
    """Scalar stiffness matrix coeff * (grad u, grad v)."""
    _, _, g, wdet = space.tabulation(max(2 * (space.elem.degree - 1), 1))
    loc = coeff * np.einsum("tq,tqid,tqjd->tij", wdet, g, g)
    cd = space.dofmap.cell_dofs
    return _scatter(cd, cd, loc, (space.ndof, space.ndof))


def assemble_divergence(vspace: FunctionSpace, pspace: FunctionSpace) -> sp.csr_matrix:
    """Coupling matrix B with (B u)_q = (div u, psi_q); shape (np, 2 nu)."""
    degree = vspace.elem.degree + pspace.elem.degree
    _, _, gv, wdet = vspace.tabulation(degree)
    _, psi, _, _ = pspace.tabulation(degree)
    loc = np.einsum("tq,qi,tqjd->tijd", wdet, psi, gv)  # (nt, np_b, nv_b, 2)
    nt, nb_p, nb_v, _ = loc.shape
    nu = vspace.ndof
    rows = np.repeat(pspace.dofmap.cell_dofs, 2 * nb_v, axis=1).ravel()
    cols_x = vspace.dofmap.cell_dofs
    cols = np.concatenate([cols_x, nu + cols_x], axis=1)  # d-major: x block then y block
    cols = np.tile(cols, (1, nb_p)).ravel()
    data = np.concatenate([loc[:, :, :, 0], loc[:, :, :, 1]], axis=2).ravel()
    return sp.coo_matrix((data, (rows, cols)), shape=(pspace.ndof, 2 * nu)).tocsr()


def assemble_convection(vspace: FunctionSpace, w: np.ndarray) -> sp.csr_matrix:
    """Skew-symmetric convection block N(w) with N_ij = c(w; phi_j, phi_i)."""
    _, phi, g, wdet = vspace.tabulation(VOLUME_DEGREE)
    wq = np.einsum("qb,tbd->tqd", phi, _gather_vector(vspace, w))
    adv = np.einsum("tqd,tqjd->tqj", wq, g)  # (w . grad phi_j) at quad points
    X = np.einsum("tq,qi,tqj->tij", wdet, phi, adv)
    loc = 0.5 * (X - X.transpose(0, 2, 1))
    cd = vspace.dofmap.cell_dofs
    return _scatter(cd, cd, loc, (vspace.ndof, vspace.ndof))


def field_values(space: FunctionSpace, u: np.ndarray, degree: int = VOLUME_DEGREE):
    """Vector field values and gradients at the volume quadrature points.

    Returns (values (nt, nq, 2), grads (nt, nq, 2, 2)) with
    grads[..., a, d] = d(u_a)/d(x_d).
    """
    _, phi, g, _ = space.tabulation(degree)
    C = _gather_vector(space, u)
    vals = np.einsum("qb,tba->tqa", phi, C)
    grads = np.einsum("tqbd,tba->tqad", g, C)
    return vals, grads


def trilinear_c(vspace: FunctionSpace, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    """The skew form c(u; v, w) for three stacked vector fields."""
    _, _, _, wdet = vspace.tabulation(VOLUME_DEGREE)
    uv, _ = field_values(vspace, u)
    vv, vg = field_values(vspace, v)
    wv, wg = field_values(vspace, w)
    conv_v = np.einsum("tqd,tqad->tqa", uv, vg)  # (u . grad) v
    conv_w = np.einsum("tqd,tqad->tqa", uv, wg)
    integrand = 0.5 * (np.einsum("tqa,tqa->tq", conv_v, wv) - np.einsum("tqa,tqa->tq", conv_w, vv))
    return float((wdet * integrand).sum())


def assemble_vector_load(vspace: FunctionSpace, f, degree: int = VOLUME_DEGREE) -> np.ndarray:
    """Load vector (f, v) for a callable f(x, y) -> (fx, fy); stacked layout."""
    rule, phi, _, wdet = vspace.tabulation(degree)
    xq = _physical_points(vspace, rule.points)
    fx, fy = f(xq[..., 0], xq[..., 1])
    shape = xq[..., 0].shape
    farr = np.stack(
        [np.broadcast_to(np.asarray(fx, dtype=float), shape),
         np.broadcast_to(np.asarray(fy, dtype=float), shape)],
        axis=2,
    )
    loc = np.einsum("tq,tqa,qi->tia", wdet, farr, phi)
    out = np.zeros(2 * vspace.ndof)
    cd = vspace.dofmap.cell_dofs
    np.add.at(out, cd, loc[:, :, 0])
    np.add.at(out, vspace.ndof + cd, loc[:, :, 1])
    return out


# ---------------------------------------------------------------------------
# elementwise gradient projection and the subgrid load
# ---------------------------------------------------------------------------

def project_gradient(vspace: FunctionSpace, u: np.ndarray, gspace: FunctionSpace) -> np.ndarray:
    """Elementwise L2 projection of grad u onto the (discontinuous) gspace.

    Returns four stacked blocks ordered (a, d) = (0,0), (0,1), (1,0), (1,1)
    for components d(u_a)/d(x_d), each of length gspace.ndof.
    """
    degree = max(2 * gspace.elem.degree, 2)
    _, psi, _, wdet = gspace.tabulation(degree)
    _, grads = field_values(vspace, u, degree)
    mloc = np.einsum("tq,qi,qj->tij", wdet, psi, psi)
    rhs = np.einsum("tq,qi,tqad->tiad", wdet, psi, grads)
    nt, nb = grads.shape[0], psi.shape[1]
    coeff = np.linalg.solve(mloc, rhs.reshape(nt, nb, 4))
    out = np.zeros(4 * gspace.ndof)
    cd = gspace.dofmap.cell_dofs
    for k in range(4):
        out[k * gspace.ndof + cd.ravel()] = coeff[:, :, k].ravel()
    return out


def project_gradient_global(vspace: FunctionSpace, u: np.ndarray,
                            gspace: FunctionSpace, solve) -> np.ndarray:
    """L2 projection of grad u onto a continuous gspace.

    ``solve`` must invert the assembled gspace mass matrix (e.g. a cached
    factorization); the block layout of the result matches project_gradient.
    """
    degree = max(2 * gspace.elem.degree, 2)
    _, psi, _, wdet = gspace.tabulation(degree)
    _, grads = field_values(vspace, u, degree)
    rhs = np.einsum("tq,qi,tqad->tiad", wdet, psi, grads)
    cd = gspace.dofmap.cell_dofs
    out = np.zeros(4 * gspace.ndof)
    for k, (a, d) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        load = np.zeros(gspace.ndof)
        np.add.at(load, cd, rhs[:, :, a, d])
        out[k * gspace.ndof:(k + 1) * gspace.ndof] = solve(load)
    return out


def gradient_values(gspace: FunctionSpace, G: np.ndarray, degree: int = VOLUME_DEGREE) -> np.ndarray:
    """Values of a projected-gradient field at volume quadrature points;
    shape (nt, nq, 2, 2)."""
    _, psi, _, _ = gspace.tabulation(degree)
    cd = gspace.dofmap.cell_dofs
    n = gspace.ndof
    C = np.stack([G[k * n + cd] for k in range(4)], axis=2)  # (nt, nb, 4)
    vals = np.einsum("qb,tbk->tqk", psi, C)
    return vals.reshape(vals.shape[0], vals.shape[1], 2, 2)


def assemble_subgrid_rhs(
    vspace: FunctionSpace, gspace: FunctionSpace, G: np.ndarray, nu_t: float
) -> np.ndarray:
    """Load nu_t * (G, grad v) over both velocity components; stacked layout."""
    _, _, g, wdet = vspace.tabulation(VOLUME_DEGREE)
    Gq = gradient_values(gspace, G)
    loc = nu_t * np.einsum("tq,tqad,tqjd->tja", wdet, Gq, g)
    out = np.zeros(2 * vspace.ndof)
    cd = vspace.dofmap.cell_dofs
    np.add.at(out, cd, loc[:, :, 0])
    np.add.at(out, vspace.ndof + cd, loc[:, :, 1])
    return out


def projection_orthogonality_residual(
    vspace: FunctionSpace, u: np.ndarray, gspace: FunctionSpace, G: np.ndarray
) -> float:
    """max_k |(grad u - G, psi_k)| over all test functions of gspace.

    Local contributions are assembled into the global dofs first, so the
    residual is meaningful for continuous projection spaces as well.
    """
    degree = max(2 * gspace.elem.degree, 2)
    _, psi, _, wdet = gspace.tabulation(degree)
    _, grads = field_values(vspace, u, degree)
    Gq = gradient_values(gspace, G, degree)
    diff = grads - Gq
    res = np.einsum("tq,qi,tqad->tiad", wdet, psi, diff)
    out = np.zeros((gspace.ndof, 2, 2))
    np.add.at(out, gspace.dofmap.cell_dofs, res)
    return float(np.abs(out).max())


# ---------------------------------------------------------------------------
# interface terms
# ---------------------------------------------------------------------------

class InterfaceTrace:
    """Evaluates one mesh's fields on the shared interface quadrature points.

    On a straight mesh edge the restriction of a P2 (or P1) basis function is
    the 1D quadratic (linear) Lagrange polynomial in the shared edge
    parameter, so traces need only the dofs sitting on each interface edge.
    """

    def __init__(self, space: FunctionSpace, pairing: InterfacePairing, side: int):
        if side not in (1, 2):
            raise ValueError("side must be 1 or 2")
        self.space = space
        self.pairing = pairing
        verts = pairing.verts1 if side == 1 else pairing.verts2
        s = pairing.qparam
        if space.elem.kind == "P2":
            self.shape = np.column_stack(
                [(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)]
            )
        elif space.elem.kind == "P1":
            self.shape = np.column_stack([1 - s, s])
        else:
            raise ValueError("interface traces support P1 and P2 spaces only")
        self.dofs = np.asarray(
            [space.dofmap.edge_dofs(int(a), int(b)) for a, b in verts], dtype=np.int64
        )

    def scalar(self, c: np.ndarray) -> np.ndarray:
        """Trace of a scalar field; shape (npairs, nq)."""
        return np.einsum("qb,pb->pq", self.shape, c[self.dofs])

    def vector(self, u: np.ndarray) -> np.ndarray:
        """Trace of a stacked vector field; shape (npairs, nq, 2)."""
        n = self.space.ndof
        return np.stack([self.scalar(u[:n]), self.scalar(u[n:])], axis=2)


def jump_magnitudes(trace1: InterfaceTrace, u1: np.ndarray, trace2: InterfaceTrace, u2: np.ndarray) -> np.ndarray:
    """|u1 - u2| at every interface quadrature point; shape (npairs, nq)."""
    d = trace1.vector(u1) - trace2.vector(u2)
    return np.sqrt((d * d).sum(axis=2))


def assemble_interface_mass(
    trace: InterfaceTrace, weight: np.ndarray, kappa: float = 1.0
) -> sp.csr_matrix:
    """Scalar interface block kappa * int_I weight * u v ds.

    ``weight`` holds per-quadrature-point values, shape (npairs, nq).  The
    same block acts on both velocity components.
    """
    assert np.all(weight >= 0.0), "interface weight must be nonnegative"
    qw = trace.pairing.qweights * weight
    loc = kappa * np.einsum("pq,qi,qj->pij", qw, trace.shape, trace.shape)
    n = trace.space.ndof
    return _scatter(trace.dofs, trace.dofs, loc, (n, n))


def assemble_interface_load(trace: InterfaceTrace, vec: np.ndarray, kappa: float = 1.0) -> np.ndarray:
    """Load kappa * int_I vec . v ds for per-point vector data (npairs, nq, 2)."""
    qw = trace.pairing.qweights
    loc = kappa * np.einsum("pq,pqa,qi->pia", qw, vec, trace.shape)
    n = trace.space.ndof
    out = np.zeros(2 * n)
    np.add.at(out, trace.dofs, loc[:, :, 0])
    np.add.at(out, n + trace.dofs, loc[:, :, 1])
    return out


def interface_weighted_square(trace: InterfaceTrace, weight: np.ndarray, u: np.ndarray) -> float:
    """int_I weight * |u|^2 ds for a stacked vector field."""
    tr = trace.vector(u)
    return float((trace.pairing.qweights * weight * (tr * tr).sum(axis=2)).sum())


# ---------------------------------------------------------------------------
# deferred-correction right side
# ---------------------------------------------------------------------------

def correction_rhs_terms(
    vspace: FunctionSpace,
    stiffness: sp.csr_matrix,
    divergence: sp.csr_matrix,
    trace_own: InterfaceTrace,
    trace_other: InterfaceTrace,
    *,
    f_new,
    f_old,
    uhat_new: np.ndarray,
    uhat_old: np.ndarray,
    uhat_other_new: np.ndarray,
    uhat_other_old: np.ndarray,
    phat_new: np.ndarray,
    phat_old: np.ndarray,
    jump_new: np.ndarray,
    jump_old: np.ndarray,
    jump_older: np.ndarray,
    nu: float,
    nu_t: float,
    kappa: float,
) -> dict:
    """The ten named right-side terms of the correction solve, own domain.

    Gradient terms reuse the assembled scalar stiffness (applied per
    component) and the pressure term reuses the divergence coupling, so every
    term is evaluated with the same quadrature as the system matrix.
    """
    n = vspace.ndof

    def blockmul(mat, u):
        return np.concatenate([mat @ u[:n], mat @ u[n:]])

    terms = {}
    if f_new is None and f_old is None:
        terms["forcing_trapezoid"] = np.zeros(2 * n)
    else:
        zero = lambda x, y: (np.zeros_like(x), np.zeros_like(x))
        ln = assemble_vector_load(vspace, f_new or zero)
        lo = assemble_vector_load(vspace, f_old or zero)
        terms["forcing_trapezoid"] = 0.5 * (ln + lo)

    terms["increment_diffusion"] = 0.5 * (nu + nu_t) * blockmul(stiffness, uhat_new - uhat_old)
    terms["added_viscosity"] = nu_t * blockmul(stiffness, 0.5 * (uhat_new + uhat_old))

    tr_own_new = trace_own.vector(uhat_new)
    tr_own_old = trace_own.vector(uhat_old)
    tr_other_new = trace_other.vector(uhat_other_new)
    tr_other_old = trace_other.vector(uhat_other_old)

    djump = (jump_new - jump_old)[:, :, None]
    terms["drag_rate_jump"] = assemble_interface_load(trace_own, tr_own_new * djump, -0.5 * kappa)
    terms["drag_rate_velocity"] = assemble_interface_load(
        trace_own, (tr_own_new - tr_own_old) * jump_old[:, :, None], 0.5 * kappa
    )
    ga_w = (np.sqrt(jump_old) * np.sqrt(jump_older))[:, :, None]
    terms["ga_lagged"] = assemble_interface_load(trace_own, tr_other_old * ga_w, -kappa)
    terms["drag_other_new"] = assemble_interface_load(
        trace_own, tr_other_new * jump_new[:, :, None], 0.5 * kappa
    )
    terms["drag_other_old"] = assemble_interface_load(
        trace_own, tr_other_old * jump_old[:, :, None], 0.5 * kappa
    )

    N_new = assemble_convection(vspace, uhat_new)
    N_old = assemble_convection(vspace, uhat_old)
    terms["convection_difference"] = 0.5 * (blockmul(N_new, uhat_new) - blockmul(N_old, uhat_old))
    terms["pressure_difference"] = -0.5 * (divergence.T @ (phat_new - phat_old))
    return terms


def assemble_correction_rhs(*args, **kwargs) -> np.ndarray:
    """Sum of :func:`correction_rhs_terms`."""
    terms = correction_rhs_terms(*args, **kwargs)
    return sum(terms.values())
