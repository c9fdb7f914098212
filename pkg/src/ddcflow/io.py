"""Run configuration parsing plus CSV and VTK output.

The configuration grammar is flat INI: ``[section]`` headers, ``key = value``
lines and ``#`` comments.  Recognized sections are ``[problem]``, ``[mesh]``,
``[scheme]`` and ``[output]``; every key is listed in _SCHEMA below and
anything else is rejected with a message naming the key and its section.

    [problem]
    kind = table2            # table1..table4, obstacle, or custom
    # custom runs additionally take: a, nu1, nu2, kappa,
    # forcing = manufactured|zero

    [mesh]
    level = 8                # structured resolution (obstacle: refine factor)
    pattern = diagonal       # or cross
    # alternatively a Gmsh MSH 2.2 pair:
    # msh1 = top.msh
    # msh2 = bottom.msh
    # tags1 = inlet:inflow, 2:wall   (physical name or id -> boundary role)

    [scheme]
    variant = sav            # or av
    dt = 0.125               # tables/custom default: 1/level
    final_time = 1.0
    nu_t = 0.125             # sets both domains; nu_t1/nu_t2 override
    subgrid_degree = 1       # 0, 1, or p1
    picard_tol = 1e-9
    picard_max = 50

    [output]
    dir = out
    snapshots = 2, 4, 5      # must lie on the time grid
    probe = 2.0, 0.5
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

import numpy as np

from . import analysis
from .mesh import BoundaryTag, refine_uniform
from .scheme import SchemeConfig


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


KINDS = ("table1", "table2", "table3", "table4", "obstacle", "custom")

_SCHEMA = {
    "problem": ("kind", "a", "nu1", "nu2", "kappa", "forcing"),
    "mesh": ("level", "pattern", "msh1", "msh2", "tags1", "tags2"),
    "scheme": ("variant", "dt", "final_time", "nu_t", "nu_t1", "nu_t2",
               "subgrid_degree", "picard_tol", "picard_max"),
    "output": ("dir", "snapshots", "probe"),
}

_TAG_NAMES = {
    "wall": BoundaryTag.WALL,
    "interface": BoundaryTag.INTERFACE,
    "inflow": BoundaryTag.INFLOW,
    "outflow": BoundaryTag.OUTFLOW,
}


@dataclass
class RunConfig:
    """Fully resolved description of one run."""

    kind: str
    params: analysis.FlowParameters | None  # None for the obstacle case
    forcing: str  # "manufactured" or "zero"
    level: int | None
    pattern: str
    msh_paths: tuple | None
    tag_maps: tuple | None
    scheme: SchemeConfig
    out_dir: str
    snapshot_times: tuple
    probe: tuple | None
    # "section.key" strings that were present in the file, for callers that
    # must tell an explicit value apart from a filled-in default
    explicit: frozenset = frozenset()


class _Section:
    """One parsed section with typed, tracked-usage access."""

    def __init__(self, name, raw):
        self.name = name
        self.raw = dict(raw)
        self.used = set()

    def get(self, key, conv, default=None, required=False):
        if key not in self.raw:
            if required:
                raise ConfigError(f"missing required key '{key}' in section [{self.name}]")
            return default
        self.used.add(key)
        text = self.raw[key]
        try:
            return conv(text)
        except (TypeError, ValueError):
            raise ConfigError(
                f"[{self.name}] {key}: expected {conv.__name__}, got {text!r}"
            ) from None

    def reject_unused(self, reason_by_key=()):
        for key in self.raw:
            if key not in self.used:
                extra = dict(reason_by_key).get(key)
                hint = f" ({extra})" if extra else ""
                raise ConfigError(f"key '{key}' in section [{self.name}] is not allowed here{hint}")


def _float_list(text):
    parts = [p for p in text.split(",") if p.strip()]
    return tuple(float(p) for p in parts)


_float_list.__name__ = "comma-separated numbers"


def _tag_map(text):
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, _, role = item.partition(":")
        role = role.strip().lower()
        if role not in _TAG_NAMES:
            raise ValueError(f"unknown boundary role {role!r}")
        key = key.strip()
        try:
            key = int(key)
        except ValueError:
            pass  # physical name
        out[key] = _TAG_NAMES[role]
    if not out:
        raise ValueError("empty tag map")
    return out


_tag_map.__name__ = "tag map like 'inlet:inflow, 2:wall'"


def _subgrid_degree(text):
    text = text.strip().lower()
    if text == "p1":
        return "p1"
    return int(text)


_subgrid_degree.__name__ = "0, 1 or p1"


def parse_config(text: str) -> RunConfig:
    """Parse and validate INI configuration text.

    Every problem detected raises ConfigError with the offending key and
    section; values the file leaves out get the documented defaults.
    """
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), strict=True
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    sec = {
        name: _Section(name, parser[name] if parser.has_section(name) else {})
        for name in _SCHEMA
    }

    prob = sec["problem"]
    kind = prob.get("kind", str, required=True).strip().lower()
    if kind not in KINDS:
        raise ConfigError(f"[problem] kind: must be one of {', '.join(KINDS)}, got {kind!r}")

    if kind == "custom":
        params = analysis.FlowParameters(
            a=prob.get("a", float, required=True),
            nu1=prob.get("nu1", float, required=True),
            nu2=prob.get("nu2", float, required=True),
            kappa=prob.get("kappa", float, required=True),
        )
        forcing = prob.get("forcing", str, default="manufactured").strip().lower()
        if forcing not in ("manufactured", "zero"):
            raise ConfigError(
                f"[problem] forcing: must be 'manufactured' or 'zero', got {forcing!r}"
            )
        default_variant = "sav"
    elif kind == "obstacle":
        params = None
        forcing = "zero"
        default_variant = "sav"
    else:
        params, default_variant = analysis.BENCHMARKS[kind]
        forcing = "manufactured"
    prob.reject_unused(
        {k: "only valid for kind = custom" for k in ("a", "nu1", "nu2", "kappa", "forcing")}
    )

    mesh = sec["mesh"]
    level = mesh.get("level", int)
    pattern = mesh.get("pattern", str, default="diagonal").strip().lower()
    if pattern not in ("diagonal", "cross"):
        raise ConfigError(f"[mesh] pattern: must be 'diagonal' or 'cross', got {pattern!r}")
    msh1 = mesh.get("msh1", str)
    msh2 = mesh.get("msh2", str)
    if (msh1 is None) != (msh2 is None):
        raise ConfigError("[mesh] msh1 and msh2 must be given together")
    msh_paths = None
    tag_maps = None
    if msh1 is not None:
        if level is not None:
            raise ConfigError("[mesh] give either level or msh1/msh2, not both")
        for path in (msh1, msh2):
            if not os.path.exists(path):
                raise ConfigError(f"[mesh] file not found: {path}")
        msh_paths = (msh1, msh2)
        tag_maps = (mesh.get("tags1", _tag_map), mesh.get("tags2", _tag_map))
    else:
        if level is None:
            if kind == "obstacle":
                level = 1
            else:
                raise ConfigError("missing required key 'level' in section [mesh]")
        if level < 1:
            raise ConfigError(f"[mesh] level: must be at least 1, got {level}")
    mesh.reject_unused({"tags1": "requires msh1", "tags2": "requires msh2"})

    sch = sec["scheme"]
    variant = sch.get("variant", str, default=default_variant).strip().lower()
    if kind == "obstacle":
        dt_default, nut_default, t_default = 0.01, 0.01, 5.0
    else:
        h = 1.0 / level if level is not None else None
        dt_default, nut_default, t_default = h, h, 1.0
    dt = sch.get("dt", float, default=dt_default)
    nu_t = sch.get("nu_t", float, default=nut_default)
    if dt is None or nu_t is None:
        raise ConfigError("[scheme] dt and nu_t are required when the mesh is not structured")
    if kind == "obstacle":
        nu1, nu2, kappa = 1e-3, 1.0, 1.0
    else:
        nu1, nu2, kappa = params.nu1, params.nu2, params.kappa
    config = SchemeConfig(
        nu1=nu1,
        nu2=nu2,
        kappa=kappa,
        dt=dt,
        final_time=sch.get("final_time", float, default=t_default),
        nu_t1=sch.get("nu_t1", float, default=nu_t),
        nu_t2=sch.get("nu_t2", float, default=nu_t),
        variant=variant,
        subgrid_degree=sch.get("subgrid_degree", _subgrid_degree, default=1),
        picard_tol=sch.get("picard_tol", float, default=1e-9),
        picard_max=sch.get("picard_max", int, default=50),
    )
    sch.reject_unused()
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(f"[scheme] {exc}") from None

    outp = sec["output"]
    out_dir = outp.get("dir", str, default="out").strip()
    snapshot_times = outp.get("snapshots", _float_list, default=())
    probe = outp.get("probe", _float_list)
    outp.reject_unused()
    if probe is not None and len(probe) != 2:
        raise ConfigError("[output] probe: expected two comma-separated coordinates")
    for s in snapshot_times:
        k = s / config.dt
        if abs(k - round(k)) > 1e-9 or not 0 < s <= config.final_time + 1e-12:
            raise ConfigError(f"[output] snapshots: time {s} is not on the time grid")

    return RunConfig(
        kind=kind,
        params=params,
        forcing=forcing,
        level=level,
        pattern=pattern,
        msh_paths=msh_paths,
        tag_maps=tag_maps,
        scheme=config,
        out_dir=out_dir,
        snapshot_times=snapshot_times,
        probe=probe,
        explicit=frozenset(f"{s.name}.{k}" for s in sec.values() for k in s.raw),
    )


# ---------------------------------------------------------------------------
# exporters


def export_table_csv(result, path) -> None:
    """Write one refinement sweep as CSV.

    Columns: defect-step errors (e1) then corrected-step errors (e2), each
    with its observed convergence rate; the first row has no rates.
    """
    rows = result.row_format()
    if not rows:
        raise ValueError("refusing to write an empty table")
    lines = ["1/h,e1_L2,CR,e1_H1,CR,e2_L2,CR,e2_H1,CR"]
    for row in rows:
        cells = [f"{row[0]:g}"]
        for err, rate in zip(row[1::2], row[2::2]):
            cells.append(f"{err:.5e}")
            cells.append("" if rate is None else f"{rate:.2f}")
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_diagnostics_csv(traj, path) -> None:
    """Per-step Picard counts, divergence residuals, kinetic energies.

    When the trajectory carries an energy monitor its lhs/rhs/slack columns
    are appended; slack <= 0 is the discrete stability inequality.
    """
    header = [
        "step", "time",
        "picard_defect_1", "picard_defect_2",
        "picard_corrected_1", "picard_corrected_2",
        "div_residual_defect", "div_residual_corrected",
        "kinetic_defect", "kinetic_corrected",
    ]
    mon = {rec[0]: rec for rec in traj.monitor} if traj.monitor else None
    if mon is not None:
        header += ["energy_lhs", "energy_rhs", "energy_slack"]
    lines = [",".join(header)]
    for k, d in enumerate(traj.diagnostics, start=1):
        cells = [str(k), f"{d.time:.10g}",
                 str(d.picard_defect[0]), str(d.picard_defect[1]),
                 str(d.picard_correction[0]), str(d.picard_correction[1]),
                 f"{d.div_residual_defect:.5e}", f"{d.div_residual_corrected:.5e}",
                 f"{d.kinetic_defect:.10e}", f"{d.kinetic_corrected:.10e}"]
        if mon is not None:
            rec = mon[k]
            cells += [f"{rec[2]:.10e}", f"{rec[3]:.10e}", f"{rec[4]:.3e}"]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _vis_mesh(mesh):
    """Once-refined mesh whose vertex k sits at scalar P2 dof k."""
    fine = refine_uniform(mesh, 1)
    return fine


def export_vtk(fields: dict, mesh, path) -> None:
    """Write velocity, pressure and speed as legacy ASCII VTK point data.

    ``fields`` holds ``velocity`` (vector P2 coefficients, length 2n) and
    ``pressure`` (vertex P1 coefficients).  Quadratic fields are emitted
    exactly at their nodes by refining every triangle once, so the file has
    one point per scalar velocity dof and four cells per input triangle.
    """
    u = np.asarray(fields["velocity"], dtype=float)
    p = np.asarray(fields["pressure"], dtype=float)
    fine = _vis_mesh(mesh)
    npts = fine.num_vertices
    n = u.size // 2
    if u.size != 2 * npts:
        raise ValueError(f"velocity has {u.size} entries, expected {2 * npts}")
    if p.size != mesh.num_vertices:
        raise ValueError(f"pressure has {p.size} entries, expected {mesh.num_vertices}")
    ux, uy = u[:n], u[n:]
    # P1 pressure is linear along edges, so midpoint values are averages
    uniq, _ = mesh.edges()
    pfine = np.concatenate([p, 0.5 * (p[uniq[:, 0]] + p[uniq[:, 1]])])
    speed = np.hypot(ux, uy)

    out = []
    out.append("# vtk DataFile Version 2.0")
    out.append("two-domain flow snapshot")
    out.append("ASCII")
    out.append("DATASET UNSTRUCTURED_GRID")
    out.append(f"POINTS {npts} double")
    for x, y in fine.vertices:
        out.append(f"{x:.9e} {y:.9e} 0.0")
    nt = fine.num_triangles
    out.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in fine.triangles:
        out.append(f"3 {a} {b} {c}")
    out.append(f"CELL_TYPES {nt}")
    out.extend(["5"] * nt)
    out.append(f"POINT_DATA {npts}")
    out.append("VECTORS velocity double")
    for vx, vy in zip(ux, uy):
        out.append(f"{vx:.9e} {vy:.9e} 0.0")
    out.append("SCALARS pressure double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(f"{v:.9e}" for v in pfine)
    out.append("SCALARS velocity_magnitude double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(f"{v:.9e}" for v in speed)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def export_mesh_vtk(mesh, path) -> None:
    """Write the triangulation itself (no fields) as legacy ASCII VTK."""
    out = [
        "# vtk DataFile Version 2.0",
        "triangulation",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
    ]
    for x, y in mesh.vertices:
        out.append(f"{x:.9e} {y:.9e} 0.0")
    nt = mesh.num_triangles
    out.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        out.append(f"3 {a} {b} {c}")
    out.append(f"CELL_TYPES {nt}")
    out.extend(["5"] * nt)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_vtk_counts(path) -> dict:
    """Point/cell/data array sizes of a legacy VTK file (round-trip check)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    counts = {"points": None, "cells": None, "point_data": None, "arrays": []}
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        key = head[0]
        if key == "POINTS":
            counts["points"] = int(head[1])
        elif key == "CELLS":
            counts["cells"] = int(head[1])
        elif key == "POINT_DATA":
            counts["point_data"] = int(head[1])
        elif key in ("VECTORS", "SCALARS"):
            n = counts["point_data"]
            skip = 2 if key == "SCALARS" else 1  # SCALARS carries a LOOKUP_TABLE line
            vals = lines[i + skip : i + skip + n]
            width = {"VECTORS": 3, "SCALARS": 1}[key]
            ok = all(len(v.split()) == width for v in vals)
            counts["arrays"].append((head[1], len(vals), ok))
            i += skip + n
            continue
        i += 1
    return counts
