"""Command-line driver.

Subcommands: converge (refinement sweep of one variant), compare (both
variants plus error ratios), run (single simulation with snapshots and
diagnostics), verify-forcing (finite-difference residual check of the
benchmark forcing), export-mesh (write the triangulations for inspection).

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import analysis
from . import io as dio
from .io import ConfigError, RunConfig
from .linsolve import SingularSystemError, SolverAccuracyError
from .mesh import BoundaryTag, MeshFormatError, import_gmsh
from .scheme import CoupledProblem, PicardDivergenceError, Subdomain, run

_NUMERICAL_ERRORS = (
    PicardDivergenceError,
    SolverAccuracyError,
    SingularSystemError,
    FloatingPointError,
)

_TABLE_KINDS = {"1": "table1", "2": "table2", "3": "table3", "4": "table4"}


def _parse_levels(text):
    try:
        levels = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"--levels: expected comma-separated integers, got {text!r}") from None
    if not levels or any(v < 1 for v in levels):
        raise ConfigError(f"--levels: levels must be positive integers, got {text!r}")
    return levels


def _load_config(args, need_file=False) -> RunConfig:
    """RunConfig from --config and/or the shorthand flags, overrides applied."""
    if getattr(args, "table", None) is not None and args.config is not None:
        raise ConfigError("--table and --config are mutually exclusive")
    if args.config is not None:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            rc = dio.parse_config(fh.read())
    elif need_file:
        raise ConfigError("this subcommand requires --config")
    elif getattr(args, "table", None) is not None:
        rc = dio.parse_config(f"[problem]\nkind = {_TABLE_KINDS[args.table]}\n[mesh]\nlevel = 8\n")
    else:
        raise ConfigError("give --config or --table")

    scheme = rc.scheme
    if getattr(args, "variant", None) is not None:
        scheme = replace(scheme, variant=args.variant)
    if getattr(args, "final_time", None) is not None:
        scheme = replace(scheme, final_time=args.final_time)
    if scheme is not rc.scheme:
        try:
            scheme.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rc = replace(rc, scheme=scheme)
    if getattr(args, "out", None) is not None:
        rc = replace(rc, out_dir=args.out)
    return rc


def _sweep_knobs(rc: RunConfig, args) -> dict:
    """Shared converge/compare setup; sweeps retie dt and nu_t to each level."""
    if rc.kind == "obstacle" or rc.forcing != "manufactured":
        raise ConfigError("convergence sweeps need a manufactured problem kind")
    levels = _parse_levels(args.levels) if args.levels else [8, 16, 32]
    nu_t = rc.scheme.nu_t1 if "scheme.nu_t" in rc.explicit else None
    return {
        "prm": rc.params,
        "levels": levels,
        "final_time": rc.scheme.final_time,
        "subgrid_degree": rc.scheme.subgrid_degree,
        "pattern": rc.pattern,
        "nu_t": nu_t,
    }


def _print_study(result) -> None:
    head = ("1/h", "e1_L2", "CR", "e1_H1", "CR", "e2_L2", "CR", "e2_H1", "CR")
    widths = (4, 12, 6, 12, 6, 12, 6, 12, 6)
    print("  ".join(f"{h:>{w}}" for h, w in zip(head, widths)))
    for row in result.row_format():
        cells = [f"{row[0]:>4g}"]
        for err, rate in zip(row[1::2], row[2::2]):
            cells.append(f"{err:>12.5e}")
            cells.append(f"{rate:>6.2f}" if rate is not None else " " * 6)
        print("  ".join(cells))


def _progress(level, norms, seconds):
    print(f"  level {level} done in {seconds:.1f}s", flush=True)


def cmd_converge(args) -> int:
    rc = _load_config(args)
    knobs = _sweep_knobs(rc, args)
    prm = knobs.pop("prm")
    variant = rc.scheme.variant
    result = analysis.convergence_study(variant, prm, progress=_progress, **knobs)
    os.makedirs(rc.out_dir, exist_ok=True)
    path = os.path.join(rc.out_dir, f"convergence_{variant}.csv")
    dio.export_table_csv(result, path)
    print(f"variant: {variant}")
    _print_study(result)
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    rc = _load_config(args)
    knobs = _sweep_knobs(rc, args)
    prm = knobs.pop("prm")
    both = analysis.compare_variants(prm, progress=_progress, **knobs)
    os.makedirs(rc.out_dir, exist_ok=True)
    path = os.path.join(rc.out_dir, "compare.csv")
    keys = ("defect_l2", "defect_h1", "corrected_l2", "corrected_h1")
    lines = ["1/h," + ",".join(
        f"av_{k},sav_{k},ratio_{k}".replace("defect_", "e1_").replace("corrected_", "e2_")
        for k in keys
    )]
    for j, lev in enumerate(both["av"].levels):
        cells = [f"{lev:g}"]
        for k in keys:
            cells.append(f"{both['av'].errors[k][j]:.5e}")
            cells.append(f"{both['sav'].errors[k][j]:.5e}")
            cells.append(f"{both['ratio'][k][j]:.4f}")
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for variant in ("av", "sav"):
        print(f"variant: {variant}")
        _print_study(both[variant])
    worst = min(min(both["ratio"][k]) for k in keys)
    print(f"smallest av/sav error ratio: {worst:.3f}")
    print(f"wrote {path}")
    return 0


def _channel_conventions():
    def profile(x, y, t):
        return 6.0 * y * (1.0 - y), 0.0 * y

    def still(x, y, t):
        return 0.0 * x, 0.0 * y

    return {BoundaryTag.WALL: still, BoundaryTag.INFLOW: profile,
            BoundaryTag.OUTFLOW: profile}


def _build_problem(rc: RunConfig):
    c = rc.scheme
    if rc.msh_paths is not None:
        meshes = [import_gmsh(p, t) for p, t in zip(rc.msh_paths, rc.tag_maps)]
        nus = (c.nu1, c.nu2)
        nuts = (c.nu_t1, c.nu_t2)
        doms = []
        if rc.forcing == "manufactured":
            for i, m in enumerate(meshes):
                ui = analysis.velocity(i, rc.params)
                fi = analysis.forcing(i, rc.params)
                present = {BoundaryTag(int(t)) for t in m.boundary_tags}
                bc = {t: ui for t in present if t != BoundaryTag.INTERFACE}
                force = lambda t, fi=fi: (lambda x, y: fi(x, y, t))
                doms.append(Subdomain(m, bc, nus[i], nuts[i], force, c.subgrid_degree))
            init = lambda i, t: analysis.velocity_at(i, rc.params, t)
        else:
            # channel conventions: parabolic stream on inflow/outflow,
            # no-slip walls, start from rest
            for i, m in enumerate(meshes):
                doms.append(Subdomain(m, _channel_conventions(), nus[i], nuts[i],
                                      None, c.subgrid_degree))
            init = None
        return CoupledProblem(doms[0], doms[1], c.kappa, initial_velocity=init), c
    if rc.kind == "obstacle":
        problem, config = analysis.obstacle_problem(
            variant=c.variant, refine=rc.level, final_time=c.final_time,
            dt=c.dt, nu1=c.nu1, nu2=c.nu2, kappa=c.kappa, nu_t=c.nu_t1,
            nu_t2=c.nu_t2, subgrid_degree=c.subgrid_degree, pattern=rc.pattern,
        )
    else:
        body = "exact" if rc.forcing == "manufactured" else "zero"
        problem, config = analysis.manufactured_problem(
            rc.params, rc.level, c.variant, final_time=c.final_time,
            subgrid_degree=c.subgrid_degree, body_force=body, nu_t=c.nu_t1,
            nu_t2=c.nu_t2, dt=c.dt, pattern=rc.pattern,
        )
    # the benchmark builders assemble their own scheme config; carry the run
    # file's iteration knobs over instead of dropping them
    config = replace(config, picard_tol=c.picard_tol, picard_max=c.picard_max)
    return problem, config


def cmd_run(args) -> int:
    rc = _load_config(args, need_file=True)
    problem, config = _build_problem(rc)
    # the energy certificate only speaks about unforced no-through-flow runs
    driven = any(
        int(t) in (int(BoundaryTag.INFLOW), int(BoundaryTag.OUTFLOW))
        for d in problem.dom for t in np.unique(d.mesh.boundary_tags)
    )
    monitor = rc.forcing == "zero" and not driven
    probe = (*rc.probe, 0) if rc.probe is not None else None
    traj = run(
        problem, config, record="light", snapshot_times=rc.snapshot_times,
        probe=probe, monitor=monitor,
    )
    os.makedirs(rc.out_dir, exist_ok=True)
    written = []
    for s in rc.snapshot_times:
        fields = traj.snapshots[float(s)]
        for i, d in enumerate(problem.dom):
            path = os.path.join(rc.out_dir, f"snapshot_t{s:g}_dom{i + 1}.vtk")
            dio.export_vtk(
                {"velocity": fields["corrected"][i], "pressure": fields["pressure"][i]},
                d.mesh, path,
            )
            written.append(path)
    diag_path = os.path.join(rc.out_dir, f"diagnostics_{config.variant}.csv")
    dio.export_diagnostics_csv(traj, diag_path)
    written.append(diag_path)
    if traj.probe_series:
        probe_path = os.path.join(rc.out_dir, f"probe_{config.variant}.csv")
        with open(probe_path, "w") as fh:
            fh.write("time,speed\n")
            for t, v in traj.probe_series:
                fh.write(f"{t:.10g},{v:.10e}\n")
        written.append(probe_path)
    last = traj.diagnostics[-1]
    print(f"completed {len(traj.diagnostics)} steps to t = {last.time:g}")
    print(f"final kinetic energy (corrected) = {last.kinetic_corrected:.6e}")
    print(f"max divergence residual = "
          f"{max(d.div_residual_corrected for d in traj.diagnostics):.3e}")
    if monitor:
        slack = max(row[4] for row in traj.monitor)
        print(f"energy inequality slack (max, <=0 is stable): {slack:.3e}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_verify_forcing(args) -> int:
    if args.config is not None or getattr(args, "table", None) is not None:
        rc = _load_config(args)
        if rc.params is None:
            raise ConfigError("verify-forcing needs a manufactured problem kind")
        cases = [(rc.kind, rc.params)]
    else:
        cases = [("table2", analysis.PARAM_MODERATE), ("table4", analysis.PARAM_LOW)]
    worst = 0.0
    for name, prm in cases:
        res = analysis.forcing_residual(prm, corruption=args.corrupt)
        print(f"{name}: max relative momentum residual {res:.3e} over 1000 points")
        worst = max(worst, res)
    if worst >= 1e-5:
        print("FAIL: residual above 1e-5", file=sys.stderr)
        return 1
    return 0


def cmd_export_mesh(args) -> int:
    rc = _load_config(args, need_file=True)
    problem, _ = _build_problem(rc)
    os.makedirs(rc.out_dir, exist_ok=True)
    for i, d in enumerate(problem.dom):
        path = os.path.join(rc.out_dir, f"mesh_dom{i + 1}.vtk")
        dio.export_mesh_vtk(d.mesh, path)
        print(f"wrote {path} ({d.mesh.num_vertices} vertices, "
              f"{d.mesh.num_triangles} triangles)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddcflow",
        description="Two-domain fluid interaction solver with defect-deferred correction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, table=True):
        p.add_argument("--config", help="INI configuration file")
        if table:
            p.add_argument("--table", choices=sorted(_TABLE_KINDS),
                           help="benchmark shorthand instead of --config")
        p.add_argument("--out", help="output directory override")

    p = sub.add_parser("converge", help="refinement sweep of one variant")
    common(p)
    p.add_argument("--levels", help="comma-separated refinement levels (default 8,16,32)")
    p.add_argument("--variant", choices=("sav", "av"), help="stabilization override")
    p.add_argument("--final-time", type=float, dest="final_time")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("compare", help="run both variants and report ratios")
    common(p)
    p.add_argument("--levels", help="comma-separated refinement levels (default 8,16,32)")
    p.add_argument("--final-time", type=float, dest="final_time")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("run", help="single simulation with snapshots")
    common(p, table=False)
    p.add_argument("--variant", choices=("sav", "av"), help="stabilization override")
    p.add_argument("--final-time", type=float, dest="final_time")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-forcing", help="finite-difference check of benchmark forcing")
    common(p)
    p.add_argument("--corrupt", type=float, default=0.0,
                   help=argparse.SUPPRESS)  # negative-control hook for tests
    p.set_defaults(func=cmd_verify_forcing)

    p = sub.add_parser("export-mesh", help="write the triangulations as VTK")
    common(p, table=False)
    p.set_defaults(func=cmd_export_mesh)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MeshFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
