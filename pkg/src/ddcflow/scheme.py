"""Two-step time advancement of the coupled two-domain flow.

Each step first solves a stabilized backward-Euler system per subdomain (the
defect step), then one deferred-correction solve that subtracts the
stabilization and first-order-in-time errors measured on the defect fields.
The interface drag is geometrically averaged in time: the coupling term seen
by one subdomain uses only the other subdomain's previous-level trace, so
within a step the two subdomain solves are independent of each other.

The advective term is linearized by Picard iteration on the matrix
N(w_old), keeping the skew-symmetric structure at every inner iterate; each
inner system is solved directly (see linsolve).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import forms
from .fem import FunctionSpace, VelocityBC, interpolate, interpolate_vector
from .linsolve import SaddleSystem, SolverAccuracyError, enforce_pressure_mean, solve_saddle
from .mesh import InterfacePairing, Mesh, build_interface_pairing

VARIANTS = ("sav", "av")


class PicardDivergenceError(Exception):
    """Raised when the advective fixed-point iteration fails to converge."""


@dataclass
class SchemeConfig:
    """Scheme parameters for one coupled run.

    ``variant`` selects how the artificial viscosity nu_t acts: "sav"
    confines it to the gradient fluctuation (full term minus the lagged
    elementwise gradient projection), "av" applies it to all scales by
    forcing the projection to zero.  dt must divide final_time.
    """

    nu1: float
    nu2: float
    kappa: float
    dt: float
    final_time: float
    nu_t1: float
    nu_t2: float
    variant: str = "sav"
    subgrid_degree: int = 1
    picard_tol: float = 1e-9
    picard_max: int = 50

    def validate(self) -> None:
        for name in ("nu1", "nu2", "dt", "final_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("nu_t1", "nu_t2", "kappa", "picard_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.subgrid_degree not in (0, 1, "p1"):
            raise ValueError("subgrid_degree must be 0, 1 or 'p1'")
        if self.picard_max < 1:
            raise ValueError("picard_max must be at least 1")
        ratio = self.final_time / self.dt
        if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio):
            raise ValueError("dt must divide final_time")

    @property
    def num_levels(self) -> int:
        """Time levels are t_j = j dt for j = 0 .. num_levels."""
        return int(round(self.final_time / self.dt))


class Subdomain:
    """Spaces, boundary data and fixed operators of one flow region."""

    def __init__(self, mesh: Mesh, bc_data: dict, nu: float, nu_t: float,
                 forcing=None, subgrid_degree=1):
        self.mesh = mesh
        self.nu = nu
        self.nu_t = nu_t
        self.forcing = forcing  # None or t -> callable (x, y) -> (fx, fy)
        self.vspace = FunctionSpace(mesh, "P2")
        self.pspace = FunctionSpace(mesh, "P1")
        self._gsolver = None
        if subgrid_degree == "p1":
            self.gspace = FunctionSpace(mesh, "P1")
            lu = splu(forms.assemble_mass(self.gspace).tocsc())
            self._gsolver = lu.solve
        else:
            self.gspace = FunctionSpace(mesh, "DG1" if subgrid_degree == 1 else "DG0")
        self.bc = VelocityBC(self.vspace, bc_data)
        self.mass = forms.assemble_mass(self.vspace)
        self.stiffness = forms.assemble_stiffness(self.vspace)
        self.divergence = forms.assemble_divergence(self.vspace, self.pspace)
        ones = np.ones(self.pspace.ndof)
        self.pressure_weights = forms.assemble_mass(self.pspace) @ ones

    def project(self, u: np.ndarray) -> np.ndarray:
        """Gradient projection onto the subgrid space (layout per forms)."""
        if self._gsolver is not None:
            return forms.project_gradient_global(self.vspace, u, self.gspace, self._gsolver)
        return forms.project_gradient(self.vspace, u, self.gspace)

    def blockmul(self, mat: sp.csr_matrix, u: np.ndarray) -> np.ndarray:
        n = self.vspace.ndof
        return np.concatenate([mat @ u[:n], mat @ u[n:]])

    def kinetic(self, u: np.ndarray) -> float:
        """L2 norm squared of a stacked velocity field."""
        return float(u @ self.blockmul(self.mass, u))

    def grad_normsq(self, u: np.ndarray) -> float:
        return float(u @ self.blockmul(self.stiffness, u))

    def fluctuation_normsq(self, u: np.ndarray, G: np.ndarray) -> float:
        """Integral of |grad u - G|^2 over the subdomain."""
        _, _, _, wdet = self.vspace.tabulation(forms.VOLUME_DEGREE)
        _, grads = forms.field_values(self.vspace, u)
        Gq = forms.gradient_values(self.gspace, G)
        d = grads - Gq
        return float((wdet * (d * d).sum(axis=(2, 3))).sum())


class CoupledProblem:
    """Two subdomains, their interface pairing, and initial data."""

    def __init__(self, dom1: Subdomain, dom2: Subdomain, kappa: float,
                 initial_velocity=None, initial_pressure=None):
        self.dom = (dom1, dom2)
        self.kappa = kappa
        self.pairing = build_interface_pairing(dom1.mesh, dom2.mesh)
        self.traces = (
            forms.InterfaceTrace(dom1.vspace, self.pairing, side=1),
            forms.InterfaceTrace(dom2.vspace, self.pairing, side=2),
        )
        # initial_velocity(i, t) -> callable (x, y) -> (ux, uy), or a ready
        # coefficient vector; zero when None.  Assignable after construction.
        self.initial_velocity = initial_velocity
        self.initial_pressure = initial_pressure


@dataclass
class StepDiagnostics:
    time: float
    picard_defect: tuple
    picard_correction: tuple
    div_residual_defect: float
    div_residual_corrected: float
    kinetic_defect: float
    kinetic_corrected: float


@dataclass
class Trajectory:
    """Recorded time levels and per-step diagnostics of one run."""

    times: np.ndarray
    defect: list  # [domain][level] stacked velocity arrays (record="all")
    corrected: list
    pressure: list  # defect pressures
    pressure_corrected: list
    grad_fields: list  # lagged gradient projections per level
    diagnostics: list = field(default_factory=list)
    monitor: list = field(default_factory=list)
    probe_series: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def final(self, what: str = "corrected"):
        return [lev[-1] for lev in getattr(self, what)]


@dataclass
class _State:
    """Rolling fields: levels n-1 and n for both families, per domain."""

    uhat_prev: list
    uhat: list
    utilde_prev: list
    utilde: list
    phat: list
    G: list
    level: int = 1


def _initial_fields(problem: CoupledProblem, config: SchemeConfig):
    dts = (0.0, config.dt)
    uhats = [[], []]
    for i, d in enumerate(problem.dom):
        for t in dts:
            if problem.initial_velocity is None:
                u = np.zeros(2 * d.vspace.ndof)
            else:
                f = problem.initial_velocity(i, t)
                # a coefficient vector is taken as-is, anything else is a callable
                if isinstance(f, np.ndarray):
                    u = f.astype(float).copy()
                else:
                    u = interpolate_vector(d.vspace, f)
            u[d.bc.dofs] = d.bc.values(t)
            uhats[i].append(u)
    phats = []
    for i, d in enumerate(problem.dom):
        if problem.initial_pressure is None:
            p = np.zeros(d.pspace.ndof)
        else:
            p = interpolate(d.pspace, problem.initial_pressure(i, config.dt))
            p = enforce_pressure_mean(p, d.pressure_weights)
        phats.append(p)
    return uhats, phats


def initialize(problem: CoupledProblem, config: SchemeConfig) -> _State:
    """Build the two prescribed starting levels (j = 0 and j = 1)."""
    config.validate()
    uhats, phats = _initial_fields(problem, config)
    Gs = []
    for i, d in enumerate(problem.dom):
        if config.variant == "sav":
            Gs.append(d.project(uhats[i][1]))
        else:
            Gs.append(np.zeros(4 * d.gspace.ndof))
    return _State(
        uhat_prev=[uhats[0][0], uhats[1][0]],
        uhat=[uhats[0][1], uhats[1][1]],
        utilde_prev=[uhats[0][0].copy(), uhats[1][0].copy()],
        utilde=[uhats[0][1].copy(), uhats[1][1].copy()],
        phat=phats,
        G=Gs,
        level=1,
    )


def _picard_solve(dom: Subdomain, F_fixed: sp.csr_matrix, rhs_u: np.ndarray,
                  w0: np.ndarray, bc_values: np.ndarray, config: SchemeConfig):
    """Iterate u -> solve with N(u) frozen, until the velocity increment is small."""
    w = w0
    for it in range(1, config.picard_max + 1):
        N = forms.assemble_convection(dom.vspace, w)
        F = sp.block_diag((F_fixed + N, F_fixed + N), format="csr")
        system = SaddleSystem(
            F=F,
            B=dom.divergence,
            rhs_u=rhs_u,
            constrained_dofs=dom.bc.dofs,
            constrained_values=bc_values,
            pressure_weights=dom.pressure_weights,
        )
        u, p = solve_saddle(system)
        incr = np.linalg.norm(u - w) / max(np.linalg.norm(u), 1e-300)
        w = u
        if incr < config.picard_tol:
            return u, p, it
    raise PicardDivergenceError(
        f"no convergence in {config.picard_max} iterations (last increment {incr:.3e})"
    )


def defect_step(problem: CoupledProblem, config: SchemeConfig, state: _State):
    """Advance the stabilized implicit solve to the next level.

    Returns (uhat_new, phat_new, picard_iters); reads only levels n and n-1
    of the defect fields, so the two subdomain solves are independent.
    """
    tr1, tr2 = problem.traces
    kappa = problem.kappa
    t_new = (state.level + 1) * config.dt
    jump_old = forms.jump_magnitudes(tr1, state.uhat[0], tr2, state.uhat[1])
    jump_older = forms.jump_magnitudes(tr1, state.uhat_prev[0], tr2, state.uhat_prev[1])
    ga_weight = np.sqrt(jump_old) * np.sqrt(jump_older)

    inputs = []
    for i, d in enumerate(problem.dom):
        j = 1 - i
        tri, trj = problem.traces[i], problem.traces[j]
        K = forms.assemble_interface_mass(tri, jump_old, kappa)
        F_fixed = d.mass / config.dt + (d.nu + d.nu_t) * d.stiffness + K
        rhs = d.blockmul(d.mass, state.uhat[i]) / config.dt
        rhs += forms.assemble_interface_load(
            tri, trj.vector(state.uhat[j]) * ga_weight[:, :, None], kappa
        )
        if d.forcing is not None:
            rhs += forms.assemble_vector_load(d.vspace, d.forcing(t_new))
        if config.variant == "sav":
            rhs += forms.assemble_subgrid_rhs(d.vspace, d.gspace, state.G[i], d.nu_t)
        inputs.append((F_fixed, rhs))

    out_u, out_p, iters = [], [], []
    for i, d in enumerate(problem.dom):
        F_fixed, rhs = inputs[i]
        u, p, it = _picard_solve(d, F_fixed, rhs, state.uhat[i], d.bc.values(t_new), config)
        out_u.append(u)
        out_p.append(p)
        iters.append(it)
    return out_u, out_p, tuple(iters)


def correction_step(problem: CoupledProblem, config: SchemeConfig, state: _State,
                    uhat_new: list, phat_new: list):
    """One deferred-correction solve per subdomain.

    Uses the freshly computed defect level (uhat_new, phat_new) plus lagged
    corrected levels; again decoupled across the interface.
    """
    tr1, tr2 = problem.traces
    kappa = problem.kappa
    t_new = (state.level + 1) * config.dt
    t_old = state.level * config.dt
    jt_old = forms.jump_magnitudes(tr1, state.utilde[0], tr2, state.utilde[1])
    jt_older = forms.jump_magnitudes(tr1, state.utilde_prev[0], tr2, state.utilde_prev[1])
    ga_weight = np.sqrt(jt_old) * np.sqrt(jt_older)
    jhat_new = forms.jump_magnitudes(tr1, uhat_new[0], tr2, uhat_new[1])
    jhat_old = forms.jump_magnitudes(tr1, state.uhat[0], tr2, state.uhat[1])
    jhat_older = forms.jump_magnitudes(tr1, state.uhat_prev[0], tr2, state.uhat_prev[1])

    inputs = []
    for i, d in enumerate(problem.dom):
        j = 1 - i
        tri, trj = problem.traces[i], problem.traces[j]
        K = forms.assemble_interface_mass(tri, jt_old, kappa)
        F_fixed = d.mass / config.dt + (d.nu + d.nu_t) * d.stiffness + K
        rhs = d.blockmul(d.mass, state.utilde[i]) / config.dt
        rhs += forms.assemble_interface_load(
            tri, trj.vector(state.utilde[j]) * ga_weight[:, :, None], kappa
        )
        rhs += forms.assemble_correction_rhs(
            d.vspace,
            d.stiffness,
            d.divergence,
            tri,
            trj,
            f_new=d.forcing(t_new) if d.forcing is not None else None,
            f_old=d.forcing(t_old) if d.forcing is not None else None,
            uhat_new=uhat_new[i],
            uhat_old=state.uhat[i],
            uhat_other_new=uhat_new[j],
            uhat_other_old=state.uhat[j],
            phat_new=phat_new[i],
            phat_old=state.phat[i],
            jump_new=jhat_new,
            jump_old=jhat_old,
            jump_older=jhat_older,
            nu=d.nu,
            nu_t=d.nu_t,
            kappa=kappa,
        )
        inputs.append((F_fixed, rhs))

    out_u, out_p, iters = [], [], []
    for i, d in enumerate(problem.dom):
        F_fixed, rhs = inputs[i]
        u, p, it = _picard_solve(d, F_fixed, rhs, state.utilde[i], d.bc.values(t_new), config)
        out_u.append(u)
        out_p.append(p)
        iters.append(it)
    return out_u, out_p, tuple(iters)


class EnergyMonitor:
    """Tracks the discrete energy inequality of the defect step for f = 0.

    After each step the accumulated left side (kinetic energy, viscous and
    fluctuation dissipation, interface drag dissipation) must not exceed the
    fixed right side built from the two starting levels.  The report rows
    hold (step, time, lhs, rhs, slack).
    """

    def __init__(self, problem: CoupledProblem, config: SchemeConfig, state: _State):
        self.problem = problem
        self.config = config
        tr1, tr2 = problem.traces
        j0 = forms.jump_magnitudes(tr1, state.uhat_prev[0], tr2, state.uhat_prev[1])
        rhs = 0.0
        for i, d in enumerate(problem.dom):
            rhs += d.kinetic(state.uhat[i])
            rhs += config.dt * d.nu_t * d.grad_normsq(state.uhat[i])
            rhs += problem.kappa * config.dt * forms.interface_weighted_square(
                problem.traces[i], j0, state.uhat[i]
            )
        self.rhs = rhs
        self.accum = 0.0
        self.rows = []

    def after_step(self, state: _State, uhat_new: list, step: int):
        problem, config = self.problem, self.config
        tr1, tr2 = problem.traces
        jump_old = forms.jump_magnitudes(tr1, state.uhat[0], tr2, state.uhat[1])
        jump_older = forms.jump_magnitudes(tr1, state.uhat_prev[0], tr2, state.uhat_prev[1])
        dt, kappa = config.dt, problem.kappa
        for i, d in enumerate(problem.dom):
            j = 1 - i
            self.accum += dt * d.nu * d.grad_normsq(uhat_new[i])
            self.accum += dt * d.nu_t * d.fluctuation_normsq(uhat_new[i], state.G[i])
            self.accum += dt * d.nu_t * d.fluctuation_normsq(state.uhat[i], state.G[i])
            a = np.sqrt(jump_old)[:, :, None] * problem.traces[i].vector(uhat_new[i])
            b = np.sqrt(jump_older)[:, :, None] * problem.traces[j].vector(state.uhat[j])
            diff = a - b
            self.accum += kappa * dt * float(
                (problem.pairing.qweights * (diff * diff).sum(axis=2)).sum()
            )
        lhs = self.accum
        for i, d in enumerate(problem.dom):
            lhs += d.kinetic(uhat_new[i])
            lhs += dt * d.nu_t * d.grad_normsq(uhat_new[i])
            lhs += kappa * dt * forms.interface_weighted_square(
                problem.traces[i], jump_old, uhat_new[i]
            )
        slack = lhs - self.rhs
        self.rows.append((step, (step + 1) * dt, lhs, self.rhs, slack))
        return slack


def run(problem: CoupledProblem, config: SchemeConfig, record: str = "all",
        snapshot_times=(), probe=None, monitor: bool = False) -> Trajectory:
    """Advance from the two starting levels to final_time.

    record="all" stores every time level (needed for error norms and the
    energy monitor); record="light" keeps only diagnostics, snapshots and the
    rolling state.  ``probe`` is an optional (x, y, domain_index) triple whose
    velocity magnitude is sampled each level.
    """
    config.validate()
    state = initialize(problem, config)
    L = config.num_levels
    times = np.arange(L + 1) * config.dt

    keep = record == "all"
    traj = Trajectory(
        times=times,
        defect=[[state.uhat_prev[i], state.uhat[i]] if keep else [] for i in range(2)],
        corrected=[[state.utilde_prev[i], state.utilde[i]] if keep else [] for i in range(2)],
        pressure=[[None, state.phat[i]] if keep else [] for i in range(2)],
        pressure_corrected=[[None, None] if keep else [] for i in range(2)],
        grad_fields=[[None, state.G[i]] if keep else [] for i in range(2)],
    )

    probe_cache = None
    if probe is not None:
        from .fem import locate_point

        x, y, idom = probe
        tri, _ = locate_point(problem.dom[idom].mesh, (x, y))
        probe_cache = (idom, tri, np.array([x, y]))
        traj.probe_series.append((config.dt, _probe_value(problem, state.utilde, probe_cache)))

    snap = sorted(set(float(s) for s in snapshot_times))
    for s in snap:
        k = s / config.dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"snapshot time {s} is not on the time grid")
    mon = EnergyMonitor(problem, config, state) if monitor else None

    for step in range(1, L):
        t_new = (step + 1) * config.dt
        try:
            uhat_new, phat_new, it_d = defect_step(problem, config, state)
            utilde_new, ptilde_new, it_c = correction_step(problem, config, state, uhat_new, phat_new)
        except SolverAccuracyError as exc:
            raise SolverAccuracyError(f"step {step} (t = {t_new:g}): {exc}") from None
        if mon is not None:
            mon.after_step(state, uhat_new, step)

        G_new = []
        for i, d in enumerate(problem.dom):
            if config.variant == "sav":
                G_new.append(d.project(uhat_new[i]))
            else:
                G_new.append(np.zeros(4 * d.gspace.ndof))

        traj.diagnostics.append(
            StepDiagnostics(
                time=t_new,
                picard_defect=it_d,
                picard_correction=it_c,
                div_residual_defect=max(
                    float(np.linalg.norm(problem.dom[i].divergence @ uhat_new[i])) for i in range(2)
                ),
                div_residual_corrected=max(
                    float(np.linalg.norm(problem.dom[i].divergence @ utilde_new[i])) for i in range(2)
                ),
                kinetic_defect=sum(problem.dom[i].kinetic(uhat_new[i]) for i in range(2)),
                kinetic_corrected=sum(problem.dom[i].kinetic(utilde_new[i]) for i in range(2)),
            )
        )
        diag = traj.diagnostics[-1]
        if not (np.isfinite(diag.kinetic_defect) and np.isfinite(diag.kinetic_corrected)):
            raise FloatingPointError(f"non-finite velocity at step {step} (t = {t_new:g})")

        state.uhat_prev = state.uhat
        state.uhat = uhat_new
        state.utilde_prev = state.utilde
        state.utilde = utilde_new
        state.phat = phat_new
        state.G = G_new
        state.level += 1

        if keep:
            for i in range(2):
                traj.defect[i].append(uhat_new[i])
                traj.corrected[i].append(utilde_new[i])
                traj.pressure[i].append(phat_new[i])
                traj.pressure_corrected[i].append(ptilde_new[i])
                traj.grad_fields[i].append(G_new[i])
        if probe_cache is not None:
            traj.probe_series.append((t_new, _probe_value(problem, state.utilde, probe_cache)))
        for s in snap:
            if abs(t_new - s) < 1e-9 * max(1.0, s):
                traj.snapshots[s] = {
                    "defect": [u.copy() for u in uhat_new],
                    "corrected": [u.copy() for u in utilde_new],
                    "pressure": [p.copy() for p in ptilde_new],
                }

    if mon is not None:
        traj.monitor = mon.rows
    return traj


def _probe_value(problem: CoupledProblem, fields: list, cache) -> float:
    from .fem import evaluate

    idom, tri, xy = cache
    val, _ = evaluate(problem.dom[idom].vspace, fields[idom], xy, tri=tri)
    return float(np.hypot(val[0], val[1]))
