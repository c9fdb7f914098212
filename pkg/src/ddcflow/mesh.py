"""Triangular meshes for the two-subdomain flow solver.

Each subdomain is meshed independently with straight-edged triangles.  The
two meshes must share a horizontal interface line (y = 0) with vertex-matched
edges; the pairing built here carries the shared edge quadrature used by the
interface terms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Coordinates closer than this are considered identical when tagging
# boundaries and matching interface edges.
GEOM_TOL = 1e-12


class BoundaryTag(enum.IntEnum):
    WALL = 1
    INTERFACE = 2
    INFLOW = 3
    OUTFLOW = 4


class MeshFormatError(Exception):
    """Raised when a mesh file cannot be parsed."""


class UnsupportedElementError(MeshFormatError):
    """Raised when a mesh file contains element types other than lines and triangles."""


class MeshPairingError(Exception):
    """Raised when two subdomain meshes do not match edge-for-edge on the interface."""


@dataclass
class Mesh:
    """Conforming triangle mesh with tagged boundary edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise vertex indices
    boundary_edges : (nb, 2) int array, vertex index pairs
    boundary_tags : (nb,) int array of BoundaryTag values
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    _edge_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self) -> tuple[np.ndarray, dict]:
        """Unique undirected edges and a (min, max) pair -> edge index lookup.

        Edges are sorted lexicographically so the numbering is reproducible.
        """
        if "edges" not in self._edge_cache:
            t = self.triangles
            pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            pairs.sort(axis=1)
            uniq = np.unique(pairs, axis=0)
            lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(uniq)}
            self._edge_cache["edges"] = (uniq, lookup)
        return self._edge_cache["edges"]

    def edge_use_counts(self) -> np.ndarray:
        uniq, lookup = self.edges()
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs.sort(axis=1)
        counts = np.zeros(len(uniq), dtype=np.int64)
        for a, b in pairs:
            counts[lookup[(int(a), int(b))]] += 1
        return counts

    def validate(self) -> None:
        """Check orientation, manifoldness, boundary consistency and Euler count."""
        areas = self.signed_areas()
        if not np.all(areas > 0):
            bad = np.flatnonzero(areas <= 0)
            raise ValueError(f"triangles with non-positive area: {bad[:10].tolist()}")
        used = np.zeros(self.num_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise ValueError("mesh has vertices not referenced by any triangle")

        uniq, lookup = self.edges()
        counts = self.edge_use_counts()
        if counts.max() > 2:
            raise ValueError("non-manifold edge shared by more than two triangles")
        boundary_set = {tuple(sorted(e)) for e in self.boundary_edges.tolist()}
        once = {tuple(uniq[i]) for i in np.flatnonzero(counts == 1)}
        if boundary_set != once:
            raise ValueError(
                "tagged boundary edges do not match the set of edges used by "
                f"exactly one triangle ({len(boundary_set)} tagged, {len(once)} actual)"
            )

        # Genus-zero Euler count: V - E + F = 2 - (boundary loops), i.e.
        # 1 - (number of holes) for a connected region.
        chi = self.num_vertices - len(uniq) + self.num_triangles
        loops = self._count_boundary_loops()
        if chi != 2 - loops:
            raise ValueError(f"Euler count V-E+F = {chi} inconsistent with {loops} boundary loops")

    def _count_boundary_loops(self) -> int:
        nxt = {}
        for a, b in self.boundary_edges.tolist():
            nxt.setdefault(a, []).append(b)
            nxt.setdefault(b, []).append(a)
        for v, nbrs in nxt.items():
            if len(nbrs) != 2:
                raise ValueError(f"boundary vertex {v} has {len(nbrs)} incident boundary edges")
        seen = set()
        loops = 0
        for start in nxt:
            if start in seen:
                continue
            loops += 1
            prev, cur = None, start
            while True:
                seen.add(cur)
                nbrs = nxt[cur]
                step = nbrs[0] if nbrs[0] != prev else nbrs[-1]
                prev, cur = cur, step
                if cur == start:
                    break
        return loops


def _tag_rect_boundary(x: np.ndarray, y: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Tag edges whose endpoints both sit on y = 0 as INTERFACE, the rest WALL."""
    on_iface = (np.abs(y[edges[:, 0]]) < GEOM_TOL) & (np.abs(y[edges[:, 1]]) < GEOM_TOL)
    tags = np.full(len(edges), int(BoundaryTag.WALL), dtype=np.int64)
    tags[on_iface] = int(BoundaryTag.INTERFACE)
    return tags


def _structured_grid(nx, ny, bbox, pattern="diagonal"):
    x0, x1, y0, y1 = bbox
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):  # column i, row j
        return j * (nx + 1) + i

    tris = []
    if pattern == "cross":
        # one extra vertex per cell centre, four triangles fanned around it;
        # centres are interior, so boundary edges stay plain grid edges
        ngrid = len(verts)
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        CX, CY = np.meshgrid(cx, cy, indexing="xy")
        verts = np.vstack([verts, np.column_stack([CX.ravel(), CY.ravel()])])
        for j in range(ny):
            for i in range(nx):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                c = ngrid + j * nx + i
                tris.extend([(v00, v10, c), (v10, v11, c), (v11, v01, c), (v01, v00, c)])
    elif pattern == "diagonal":
        for j in range(ny):
            for i in range(nx):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                # fixed diagonal from the lower-left to the upper-right corner
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
    else:
        raise ValueError(f"unknown grid pattern {pattern!r}")
    tris = np.asarray(tris, dtype=np.int64)

    edges = []
    for i in range(nx):  # bottom, then top
        edges.append((vid(i, 0), vid(i + 1, 0)))
    for i in range(nx):
        edges.append((vid(i, ny), vid(i + 1, ny)))
    for j in range(ny):  # left, then right
        edges.append((vid(0, j), vid(0, j + 1)))
    for j in range(ny):
        edges.append((vid(nx, j), vid(nx, j + 1)))
    return verts, tris, np.asarray(edges, dtype=np.int64)


def generate_rect_mesh(nx: int, ny: int, bbox: tuple, pattern: str = "diagonal") -> Mesh:
    """Structured mesh of an axis-aligned rectangle.

    The default ``"diagonal"`` pattern cuts each grid cell along its
    lower-left to upper-right diagonal, giving nx*ny*2 triangles.
    ``"cross"`` instead splits every cell into four triangles around its
    centre, which keeps the triangulation symmetric under x -> -x and
    y -> -y. Boundary edges lying on the line y = 0 are tagged INTERFACE,
    all other boundary edges WALL.

    Parameters
    ----------
    nx, ny : int
        Cells per direction, both >= 1.
    bbox : (x0, x1, y0, y1)
        Rectangle extent with x0 < x1 and y0 < y1.
    pattern : str
        ``"diagonal"`` or ``"cross"``.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    x0, x1, y0, y1 = bbox
    if not (x0 < x1 and y0 < y1):
        raise ValueError("bbox must satisfy x0 < x1 and y0 < y1")
    verts, tris, edges = _structured_grid(nx, ny, bbox, pattern)
    tags = _tag_rect_boundary(verts[:, 0], verts[:, 1], edges)
    mesh = Mesh(verts, tris, edges, tags)
    mesh.validate()
    return mesh


def generate_channel_mesh(
    nx: int,
    ny: int,
    bbox: tuple,
    interface_span: tuple | None = None,
    hole_center: tuple | None = None,
    hole_radius: float = 0.0,
    pattern: str = "diagonal",
) -> Mesh:
    """Structured channel mesh with inflow/outflow tags and an optional hole.

    The left side is tagged INFLOW, the right side OUTFLOW, the top WALL.
    Bottom edges inside ``interface_span`` (an x-range on y = 0) are tagged
    INTERFACE, the rest of the bottom WALL.  When a hole is requested, cells
    near ``hole_center`` are removed and the new internal boundary vertices
    are projected onto the circle of ``hole_radius``; the resulting polygonal
    ring is tagged WALL.  The hole must not touch the outer boundary.
    """
    verts, tris, edges = _structured_grid(nx, ny, bbox, pattern)
    x0, x1, y0, y1 = bbox

    if hole_center is not None:
        c = np.asarray(hole_center, dtype=float)
        r = float(hole_radius)
        if r <= 0:
            raise ValueError("hole_radius must be positive when hole_center is given")
        centroids = verts[tris].mean(axis=1)
        vdist = np.linalg.norm(verts - c, axis=1)
        inside_v = vdist < r - GEOM_TOL
        drop = (np.linalg.norm(centroids - c, axis=1) < r) | inside_v[tris].any(axis=1)
        if not drop.any():
            raise ValueError("hole_radius too small: no cell is removed at this resolution")
        kept = tris[~drop]
        ring = np.intersect1d(np.unique(tris[drop]), np.unique(kept))
        # snap surviving vertices of removed triangles onto the circle; leave
        # far-away ring vertices alone so their triangles cannot invert
        for v in ring:
            d = verts[v] - c
            nd = np.linalg.norm(d)
            if GEOM_TOL < nd < 1.45 * r:
                verts[v] = c + d * (r / nd)
        # hole boundary: edges of kept triangles used exactly once and not on the rectangle
        pairs = np.concatenate([kept[:, [0, 1]], kept[:, [1, 2]], kept[:, [2, 0]]])
        pairs.sort(axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        outer = {tuple(e) for e in np.sort(edges, axis=1).tolist()}
        hole_edges = [tuple(e) for e in uniq[counts == 1].tolist() if tuple(e) not in outer]
        tris = kept
        edges = np.vstack([edges, np.asarray(hole_edges, dtype=np.int64)])
        hole_first = len(edges) - len(hole_edges)
    else:
        hole_first = len(edges)

    # drop orphaned vertices and renumber
    used = np.zeros(len(verts), dtype=bool)
    used[tris.ravel()] = True
    renum = -np.ones(len(verts), dtype=np.int64)
    renum[used] = np.arange(used.sum())
    verts = verts[used]
    tris = renum[tris]
    edges = renum[edges]

    x, y = verts[:, 0], verts[:, 1]
    tags = np.full(len(edges), int(BoundaryTag.WALL), dtype=np.int64)
    ex, ey = x[edges], y[edges]
    on_left = (np.abs(ex - x0) < GEOM_TOL).all(axis=1)
    on_right = (np.abs(ex - x1) < GEOM_TOL).all(axis=1)
    on_bottom = (np.abs(ey - y0) < GEOM_TOL).all(axis=1)
    tags[on_left] = int(BoundaryTag.INFLOW)
    tags[on_right] = int(BoundaryTag.OUTFLOW)
    if interface_span is not None:
        s0, s1 = interface_span
        mids = ex.mean(axis=1)
        span = on_bottom & (mids > s0 - GEOM_TOL) & (mids < s1 + GEOM_TOL)
        if abs(y0) > GEOM_TOL:
            raise ValueError("interface_span requires the bottom boundary to lie on y = 0")
        tags[span] = int(BoundaryTag.INTERFACE)
    tags[hole_first:] = int(BoundaryTag.WALL)

    mesh = Mesh(verts, tris, edges, tags)
    mesh.validate()
    return mesh


def refine_uniform(mesh: Mesh, levels: int = 1) -> Mesh:
    """Refine by edge midpoints: each triangle becomes four similar children.

    Boundary tags are inherited by the two half edges of each boundary edge.
    """
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    out = mesh
    for _ in range(levels):
        uniq, lookup = out.edges()
        nv = out.num_vertices
        midpts = 0.5 * (out.vertices[uniq[:, 0]] + out.vertices[uniq[:, 1]])
        verts = np.vstack([out.vertices, midpts])

        def mid(a, b):
            return nv + lookup[(min(a, b), max(a, b))]

        tris = []
        for v0, v1, v2 in out.triangles.tolist():
            m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
            tris.extend([(v0, m01, m20), (v1, m12, m01), (v2, m20, m12), (m01, m12, m20)])

        edges, tags = [], []
        for (a, b), tag in zip(out.boundary_edges.tolist(), out.boundary_tags.tolist()):
            m = mid(a, b)
            edges.extend([(a, m), (m, b)])
            tags.extend([tag, tag])
        out = Mesh(
            verts,
            np.asarray(tris, dtype=np.int64),
            np.asarray(edges, dtype=np.int64),
            np.asarray(tags, dtype=np.int64),
        )
    out.validate()
    return out


def _gauss_edge_rule(npts: int = 5):
    """Gauss-Legendre nodes/weights on [0, 1]; 5 points integrate degree 9."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class InterfacePairing:
    """Matched interface edges of two subdomain meshes with shared quadrature.

    For pair k, ``verts1[k]`` and ``verts2[k]`` hold the ordered endpoint
    vertex indices of the matched edge in mesh 1 and mesh 2; both orderings
    start at the same physical point, so a parameter s in [0, 1] means the
    same location on either side.  ``qpoints[k, q]`` are physical quadrature
    points, ``qweights[k, q]`` the matching weights (summing to the edge
    length), and ``qparam[q]`` the shared parameter values.
    """

    verts1: np.ndarray  # (npairs, 2) vertex ids in mesh 1
    verts2: np.ndarray  # (npairs, 2) vertex ids in mesh 2
    qpoints: np.ndarray  # (npairs, nq, 2)
    qweights: np.ndarray  # (npairs, nq)
    qparam: np.ndarray  # (nq,)

    @property
    def num_pairs(self) -> int:
        return self.verts1.shape[0]


def _interface_edges(mesh: Mesh) -> np.ndarray:
    sel = mesh.boundary_tags == int(BoundaryTag.INTERFACE)
    return mesh.boundary_edges[sel]


def build_interface_pairing(mesh1: Mesh, mesh2: Mesh, tol: float = 1e-12) -> InterfacePairing:
    """Match INTERFACE edges of two meshes by endpoint coordinates.

    Raises MeshPairingError when the interface discretizations differ (edge
    counts or endpoint coordinates beyond ``tol``).
    """
    e1 = _interface_edges(mesh1)
    e2 = _interface_edges(mesh2)
    if len(e1) == 0 or len(e2) == 0:
        raise MeshPairingError("one of the meshes has no INTERFACE edges")
    if len(e1) != len(e2):
        raise MeshPairingError(
            f"interface edge counts differ: {len(e1)} vs {len(e2)}"
        )

    def keyed(mesh, edges):
        out = {}
        for a, b in edges.tolist():
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            # order endpoints by x then y so both sides parametrize alike
            if (pa[0], pa[1]) <= (pb[0], pb[1]):
                o = (a, b)
                key = (round(pa[0] / tol), round(pa[1] / tol), round(pb[0] / tol), round(pb[1] / tol))
            else:
                o = (b, a)
                key = (round(pb[0] / tol), round(pb[1] / tol), round(pa[0] / tol), round(pa[1] / tol))
            out[key] = o
        return out

    k1 = keyed(mesh1, e1)
    k2 = keyed(mesh2, e2)
    if set(k1) != set(k2):
        miss = len(set(k1) ^ set(k2)) // 2
        raise MeshPairingError(
            f"{miss} interface edge(s) have no coordinate match within {tol}"
        )

    keys = sorted(k1)
    v1 = np.asarray([k1[k] for k in keys], dtype=np.int64)
    v2 = np.asarray([k2[k] for k in keys], dtype=np.int64)
    s, w = _gauss_edge_rule()
    p0 = mesh1.vertices[v1[:, 0]]
    p1 = mesh1.vertices[v1[:, 1]]
    qpoints = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    lengths = np.linalg.norm(p1 - p0, axis=1)
    qweights = lengths[:, None] * w[None, :]
    return InterfacePairing(v1, v2, qpoints, qweights, s.copy())


# Gmsh MSH 2.2 ASCII element type codes
GMSH_LINE = 1
GMSH_TRIANGLE = 2


def import_gmsh(path: str, tag_map: dict | None = None) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file as a Mesh.

    Line elements become tagged boundary edges; their physical group is
    translated through ``tag_map``, which maps physical names (or numeric ids
    when the file has no $PhysicalNames section) to BoundaryTag values.
    Triangle physical groups are ignored.  Any other element type is
    rejected.  Triangles are reoriented counterclockwise when needed.
    """
    tag_map = tag_map or {}
    with open(path, "r") as fh:
        lines = fh.read().splitlines()

    def err(lineno, msg):
        return MeshFormatError(f"{path}:{lineno + 1}: {msg}")

    sections = {}
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if s.startswith("$") and not s.startswith("$End"):
            name = s[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j == len(lines):
                raise err(i, f"unterminated section ${name}")
            sections[name] = (i + 1, lines[i + 1 : j])
            i = j + 1
        elif s == "":
            i += 1
        else:
            raise err(i, f"unexpected content outside a section: {s!r}")

    if "MeshFormat" not in sections:
        raise MeshFormatError(f"{path}: missing $MeshFormat section")
    at, body = sections["MeshFormat"]
    fmt = body[0].split()
    if not fmt or not fmt[0].startswith("2.2"):
        raise err(at, f"unsupported MSH version {fmt[0] if fmt else '<empty>'}; need 2.2 ASCII")
    if len(fmt) > 1 and fmt[1] != "0":
        raise err(at, "binary MSH files are not supported")

    phys_names = {}
    if "PhysicalNames" in sections:
        at, body = sections["PhysicalNames"]
        try:
            n = int(body[0])
        except (ValueError, IndexError):
            raise err(at, "malformed $PhysicalNames count") from None
        for k in range(n):
            parts = body[1 + k].split(None, 2)
            phys_names[int(parts[1])] = parts[2].strip().strip('"')

    if "Nodes" not in sections:
        raise MeshFormatError(f"{path}: missing $Nodes section")
    at, body = sections["Nodes"]
    try:
        nn = int(body[0])
    except (ValueError, IndexError):
        raise err(at, "malformed node count") from None
    if len(body) - 1 < nn:
        raise err(at, f"node count {nn} exceeds lines present")
    ids = np.empty(nn, dtype=np.int64)
    xyz = np.empty((nn, 2), dtype=float)
    for k in range(nn):
        parts = body[1 + k].split()
        if len(parts) < 4:
            raise err(at + 1 + k, f"malformed node line: {body[1 + k]!r}")
        ids[k] = int(parts[0])
        xyz[k] = (float(parts[1]), float(parts[2]))
    renum = {int(v): k for k, v in enumerate(ids)}

    if "Elements" not in sections:
        raise MeshFormatError(f"{path}: missing $Elements section")
    at, body = sections["Elements"]
    try:
        ne = int(body[0])
    except (ValueError, IndexError):
        raise err(at, "malformed element count") from None
    tris, bedges, btags = [], [], []
    for k in range(ne):
        parts = body[1 + k].split()
        if len(parts) < 3:
            raise err(at + 1 + k, f"malformed element line: {body[1 + k]!r}")
        etype = int(parts[1])
        ntags = int(parts[2])
        nodes = [int(p) for p in parts[3 + ntags :]]
        ptag = int(parts[3]) if ntags >= 1 else 0
        if etype == GMSH_TRIANGLE:
            if len(nodes) != 3:
                raise err(at + 1 + k, "triangle element without 3 nodes")
            tris.append([renum[n] for n in nodes])
        elif etype == GMSH_LINE:
            if len(nodes) != 2:
                raise err(at + 1 + k, "line element without 2 nodes")
            name = phys_names.get(ptag, ptag)
            if name not in tag_map:
                raise err(at + 1 + k, f"no boundary tag mapping for physical group {name!r}")
            bedges.append([renum[n] for n in nodes])
            btags.append(int(tag_map[name]))
        else:
            raise UnsupportedElementError(
                f"{path}:{at + 2 + k}: unsupported element type {etype}; "
                "only lines (1) and triangles (2) are accepted"
            )
    if not tris:
        raise MeshFormatError(f"{path}: no triangles found")

    tris = np.asarray(tris, dtype=np.int64)
    mesh = Mesh(
        xyz,
        tris,
        np.asarray(bedges, dtype=np.int64).reshape(-1, 2),
        np.asarray(btags, dtype=np.int64),
    )
    areas = mesh.signed_areas()
    flip = areas < 0
    if flip.any():
        mesh.triangles[flip] = mesh.triangles[flip][:, [0, 2, 1]]
    mesh.validate()
    return mesh
