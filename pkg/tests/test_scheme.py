import numpy as np
import pytest

from ddcflow import forms
from ddcflow.fem import evaluate, interpolate_vector
from ddcflow.linsolve import SolverAccuracyError
from ddcflow.mesh import BoundaryTag, generate_rect_mesh
from ddcflow.scheme import (
    CoupledProblem,
    PicardDivergenceError,
    SchemeConfig,
    Subdomain,
    initialize,
    run,
)

DT = 0.05
WALL = int(BoundaryTag.WALL)


def make_problem(nu_t=0.2, variant="sav", forcing1=None, forcing2=None,
                 init=None, nx=4, ny=2, subgrid_degree=1):
    m1 = generate_rect_mesh(nx, ny, (0.0, 1.0, 0.0, 1.0))
    m2 = generate_rect_mesh(nx, ny, (0.0, 1.0, -1.0, 0.0))
    d1 = Subdomain(m1, {WALL: None}, nu=0.5, nu_t=nu_t, forcing=forcing1,
                   subgrid_degree=subgrid_degree)
    d2 = Subdomain(m2, {WALL: None}, nu=0.1, nu_t=nu_t, forcing=forcing2,
                   subgrid_degree=subgrid_degree)
    problem = CoupledProblem(d1, d2, kappa=1.0, initial_velocity=init)
    config = SchemeConfig(nu1=0.5, nu2=0.1, kappa=1.0, dt=DT, final_time=5 * DT,
                          nu_t1=nu_t, nu_t2=nu_t, variant=variant,
                          subgrid_degree=subgrid_degree)
    return problem, config


def random_init(problem, seed=0, scale=0.1):
    rng = np.random.default_rng(seed)
    fields = {
        (i, t): scale * rng.standard_normal(2 * problem.dom[i].vspace.ndof)
        for i in range(2) for t in (0.0, DT)
    }
    return lambda i, t: fields[(i, t)]


# ---------------------------------------------------------------- config

def test_config_validation_errors():
    good = dict(nu1=1.0, nu2=1.0, kappa=1.0, dt=0.1, final_time=1.0,
                nu_t1=0.1, nu_t2=0.1)
    SchemeConfig(**good).validate()
    for bad, match in (
        (dict(good, dt=0.0), "dt must be positive"),
        (dict(good, nu1=-1.0), "nu1 must be positive"),
        (dict(good, kappa=-0.5), "kappa must be nonnegative"),
        (dict(good, variant="foo"), "variant"),
        (dict(good, subgrid_degree=2), "subgrid_degree"),
        (dict(good, picard_max=0), "picard_max"),
        (dict(good, final_time=0.35), "divide"),
    ):
        with pytest.raises(ValueError, match=match):
            SchemeConfig(**bad).validate()


def test_num_levels():
    cfg = SchemeConfig(nu1=1, nu2=1, kappa=1, dt=0.125, final_time=1.0,
                       nu_t1=0.1, nu_t2=0.1)
    assert cfg.num_levels == 8


# ---------------------------------------------------------------- initialize

def test_initialize_interpolates_starting_levels():
    init = lambda i, t: (lambda x, y: ((1 + i + t) * x * y, x - t * y))
    problem, config = make_problem(init=init)
    state = initialize(problem, config)
    for i, d in enumerate(problem.dom):
        for t, u in ((0.0, state.uhat_prev[i]), (DT, state.uhat[i])):
            want = interpolate_vector(d.vspace, init(i, t))
            want[d.bc.dofs] = d.bc.values(t)
            assert np.abs(u - want).max() < 1e-13
        # corrected family starts from the same prescribed levels
        assert np.array_equal(state.utilde[i], state.uhat[i])
        assert np.array_equal(state.utilde_prev[i], state.uhat_prev[i])


def test_initialize_projection_is_orthogonal():
    problem, config = make_problem(init=random_init)
    problem.initial_velocity = random_init(problem, seed=4)
    state = initialize(problem, config)
    for i, d in enumerate(problem.dom):
        res = forms.projection_orthogonality_residual(
            d.vspace, state.uhat[i], d.gspace, state.G[i]
        )
        assert res < 1e-11


def test_initialize_av_has_zero_projection():
    problem, config = make_problem(variant="av")
    problem.initial_velocity = random_init(problem, seed=5)
    state = initialize(problem, config)
    for G in state.G:
        assert np.abs(G).max() == 0.0


# ---------------------------------------------------------------- basic runs

def test_zero_data_stays_zero():
    problem, config = make_problem()
    traj = run(problem, config, monitor=True)
    for i in range(2):
        for lev in traj.defect[i] + traj.corrected[i]:
            assert np.abs(lev).max() == 0.0
    for row in traj.monitor:
        assert row[2] == 0.0 and row[3] == 0.0 and row[4] == 0.0
    for diag in traj.diagnostics:
        assert diag.kinetic_defect == 0.0 and diag.kinetic_corrected == 0.0


def test_single_step_run_shapes():
    problem, config = make_problem()
    config.final_time = 2 * DT  # two prescribed levels plus one computed pair
    traj = run(problem, config)
    assert len(traj.times) == 3
    assert np.abs(traj.times - np.array([0.0, DT, 2 * DT])).max() < 1e-15
    for i in range(2):
        assert len(traj.defect[i]) == 3
        assert len(traj.corrected[i]) == 3
        assert traj.pressure[i][0] is None
        assert len(traj.pressure[i]) == 3
    assert len(traj.diagnostics) == 1


def test_run_is_deterministic():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=6)
    a = run(problem, config)
    b = run(problem, config)
    for i in range(2):
        for ua, ub in zip(a.defect[i], b.defect[i]):
            assert np.array_equal(ua, ub)
        for ua, ub in zip(a.corrected[i], b.corrected[i]):
            assert np.array_equal(ua, ub)


def test_stationary_uniform_flow_is_preserved():
    # (1, 0) in both domains: zero jump, zero forcing, slip interface
    flow = lambda x, y: (np.ones_like(x), np.zeros_like(x))
    m1 = generate_rect_mesh(4, 2, (0.0, 1.0, 0.0, 1.0))
    m2 = generate_rect_mesh(4, 2, (0.0, 1.0, -1.0, 0.0))
    d1 = Subdomain(m1, {WALL: lambda x, y, t: (np.ones_like(x), np.zeros_like(x))},
                   nu=0.5, nu_t=0.2)
    d2 = Subdomain(m2, {WALL: lambda x, y, t: (np.ones_like(x), np.zeros_like(x))},
                   nu=0.1, nu_t=0.2)
    problem = CoupledProblem(d1, d2, kappa=1.0,
                             initial_velocity=lambda i, t: flow)
    config = SchemeConfig(nu1=0.5, nu2=0.1, kappa=1.0, dt=0.1, final_time=1.0,
                          nu_t1=0.2, nu_t2=0.2)
    traj = run(problem, config)
    for i, d in enumerate(problem.dom):
        want = interpolate_vector(d.vspace, flow)
        assert np.abs(traj.defect[i][-1] - want).max() < 1e-8
        assert np.abs(traj.corrected[i][-1] - want).max() < 1e-8


def test_av_equals_sav_when_nu_t_vanishes():
    outs = {}
    for variant in ("sav", "av"):
        problem, config = make_problem(nu_t=0.0, variant=variant)
        problem.initial_velocity = random_init(problem, seed=7)
        traj = run(problem, config)
        outs[variant] = traj
    for i in range(2):
        for fam in ("defect", "corrected"):
            a = getattr(outs["sav"], fam)[i][-1]
            b = getattr(outs["av"], fam)[i][-1]
            assert np.abs(a - b).max() < 1e-12


def test_defect_step_ignores_other_domains_new_forcing():
    # the interface drag is lagged, so changing domain 2's forcing at the new
    # time level cannot influence domain 1's defect solve of the same step
    def f1(t):
        return lambda x, y: (np.sin(x + t), np.cos(y * t))

    def make_f2(poison):
        def f2(t):
            s = 7.0 if (poison and t > 1.5 * DT) else 1.0
            return lambda x, y: (s * (x + t), s * (y - t * x))
        return f2

    outs = []
    for poison in (False, True):
        problem, config = make_problem(forcing1=f1, forcing2=make_f2(poison))
        problem.initial_velocity = random_init(problem, seed=8)
        config.final_time = 2 * DT
        outs.append(run(problem, config))
    clean, poisoned = outs
    assert np.array_equal(clean.defect[0][2], poisoned.defect[0][2])
    assert not np.array_equal(clean.defect[1][2], poisoned.defect[1][2])
    # the correction deliberately consumes the other side's new defect trace
    assert not np.array_equal(clean.corrected[1][2], poisoned.corrected[1][2])


def test_nan_initial_data_aborts_with_step_index():
    problem, config = make_problem()
    d1 = problem.dom[0]
    coords = d1.vspace.dof_coords()
    free = [
        k for k in range(d1.vspace.ndof)
        if 0.05 < coords[k, 0] < 0.95 and 0.05 < coords[k, 1] < 0.95
    ]
    bad = np.zeros(2 * d1.vspace.ndof)
    bad[free[0]] = np.nan

    def init(i, t):
        if i == 0 and t > 0:
            return bad
        return np.zeros(2 * problem.dom[i].vspace.ndof)

    problem.initial_velocity = init
    with pytest.raises(SolverAccuracyError, match="step 1"):
        run(problem, config)


def test_picard_divergence_error():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=9, scale=1.0)
    config.picard_max = 1
    config.picard_tol = 1e-12
    with pytest.raises(PicardDivergenceError, match="no convergence in 1"):
        run(problem, config)


# ---------------------------------------------------------------- recording

def test_record_light_keeps_diagnostics_only():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=10)
    traj = run(problem, config, record="light")
    assert traj.defect == [[], []]
    assert traj.corrected == [[], []]
    assert len(traj.diagnostics) == config.num_levels - 1


def test_snapshots_and_grid_check():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=11)
    traj = run(problem, config, record="light", snapshot_times=(2 * DT, 5 * DT))
    assert set(traj.snapshots) == {2 * DT, 5 * DT}
    snap = traj.snapshots[2 * DT]
    assert set(snap) == {"defect", "corrected", "pressure"}
    assert len(snap["corrected"]) == 2
    with pytest.raises(ValueError, match="not on the time grid"):
        run(problem, config, snapshot_times=(2.3 * DT,))


def test_probe_series_matches_recorded_fields():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=12)
    pt = (0.3, 0.4)
    traj = run(problem, config, probe=(pt[0], pt[1], 0))
    assert len(traj.probe_series) == config.num_levels  # levels 1 .. L
    for k, (t, speed) in enumerate(traj.probe_series):
        assert abs(t - (k + 1) * DT) < 1e-12
        val, _ = evaluate(problem.dom[0].vspace, traj.corrected[0][k + 1], pt)
        assert abs(speed - np.hypot(val[0], val[1])) < 1e-13


def test_final_returns_last_levels():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=13)
    traj = run(problem, config)
    fin = traj.final("defect")
    for i in range(2):
        assert np.array_equal(fin[i], traj.defect[i][-1])


# ---------------------------------------------------------------- energy

def test_one_step_energy_identity():
    # test the defect equation with its own solution: the convection drops by
    # skew symmetry and the pressure by the discrete divergence constraint
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=14)
    config.final_time = 2 * DT
    traj = run(problem, config)
    tr1, tr2 = problem.traces
    u_prev = [traj.defect[i][0] for i in range(2)]
    u_old = [traj.defect[i][1] for i in range(2)]
    u_new = [traj.defect[i][2] for i in range(2)]
    j_old = forms.jump_magnitudes(tr1, u_old[0], tr2, u_old[1])
    j_older = forms.jump_magnitudes(tr1, u_prev[0], tr2, u_prev[1])
    ga = np.sqrt(j_old) * np.sqrt(j_older)
    for i, d in enumerate(problem.dom):
        j = 1 - i
        lhs = d.kinetic(u_new[i]) / config.dt
        lhs += (d.nu + d.nu_t) * d.grad_normsq(u_new[i])
        lhs += problem.kappa * forms.interface_weighted_square(
            problem.traces[i], j_old, u_new[i]
        )
        rhs = u_new[i] @ d.blockmul(d.mass, u_old[i]) / config.dt
        rhs += u_new[i] @ forms.assemble_interface_load(
            problem.traces[i],
            problem.traces[j].vector(u_old[j]) * ga[:, :, None],
            problem.kappa,
        )
        Gi = traj.grad_fields[i][1]
        rhs += u_new[i] @ forms.assemble_subgrid_rhs(d.vspace, d.gspace, Gi, d.nu_t)
        assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


def test_monitor_slack_nonpositive_for_random_data():
    problem, config = make_problem()
    problem.initial_velocity = random_init(problem, seed=15)
    traj = run(problem, config, monitor=True)
    assert len(traj.monitor) == config.num_levels - 1
    rhs = traj.monitor[0][3]
    for step, t, lhs, rhs_row, slack in traj.monitor:
        assert rhs_row == rhs  # fixed right side
        assert slack <= 1e-10 * max(1.0, rhs)


# ---------------------------------------------------------------- subgrid space

@pytest.mark.parametrize("degree", [0, 1, "p1"])
def test_subgrid_space_variants_run(degree):
    problem, config = make_problem(subgrid_degree=degree)
    problem.initial_velocity = random_init(problem, seed=16)
    config.final_time = 2 * DT
    traj = run(problem, config)
    for i in range(2):
        assert np.all(np.isfinite(traj.corrected[i][-1]))
    kinds = {0: "DG0", 1: "DG1", "p1": "P1"}
    assert problem.dom[0].gspace.elem.kind == kinds[degree]


def test_global_p1_projection_is_orthogonal_against_p1():
    problem, config = make_problem(subgrid_degree="p1")
    problem.initial_velocity = random_init(problem, seed=17)
    state = initialize(problem, config)
    for i, d in enumerate(problem.dom):
        res = forms.projection_orthogonality_residual(
            d.vspace, state.uhat[i], d.gspace, state.G[i]
        )
        assert res < 1e-11
