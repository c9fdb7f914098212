"""Scalar Lagrange elements, quadrature and dof bookkeeping on triangles.

Velocity components use continuous P2, pressure continuous P1, and the
gradient-projection space discontinuous P0 or P1, all on the same mesh.
Vector fields are stored as a single coefficient array of length 2*ndof with
the x block first and the y block second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, BoundaryTag


# ---------------------------------------------------------------------------
# quadrature on the reference triangle {(xi, eta): xi, eta >= 0, xi+eta <= 1}
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Points (reference coordinates), weights summing to 1/2, and the
    polynomial degree integrated exactly."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _orbit(a, b, c=None):
    if c is None:
        return [(a, b, b), (b, a, b), (b, b, a)]
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _bary_to_ref(bary):
    b = np.asarray(bary, dtype=float)
    return np.column_stack([b[:, 1], b[:, 2]])


# symmetric rules: (degree, [(weight, barycentric point), ...]); weights
# are normalized to sum to 1 and scaled by the reference area 1/2 below
_SYMMETRIC_RULES = {
    1: [(1.0, (1 / 3, 1 / 3, 1 / 3))],
    2: [(1 / 3, p) for p in _orbit(2 / 3, 1 / 6)],
    4: (
        [(0.223381589678011, p) for p in _orbit(0.108103018168070, 0.445948490915965)]
        + [(0.109951743655322, p) for p in _orbit(0.816847572980459, 0.091576213509771)]
    ),
    5: (
        [(0.225, (1 / 3, 1 / 3, 1 / 3))]
        + [(0.132394152788506, p) for p in _orbit(0.059715871789770, 0.470142064105115)]
        + [(0.125939180544827, p) for p in _orbit(0.797426985353087, 0.101286507323456)]
    ),
    6: (
        [(0.116786275726379, p) for p in _orbit(0.501426509658179, 0.249286745170910)]
        + [(0.050844906370207, p) for p in _orbit(0.873821971016996, 0.063089014491502)]
        + [(0.082851075618374, p) for p in _orbit(0.053145049844817, 0.310352451033784, 0.636502499121399)]
    ),
}


def _duffy_rule(degree: int) -> QuadratureRule:
    """Tensor Gauss rule on the collapsed square; exact to any degree."""
    n = (degree + 3) // 2
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    xi = np.repeat(g, n)
    s = np.tile(g, n)
    eta = s * (1.0 - xi)
    wt = np.repeat(w * (1.0 - g), n) * np.tile(w, n)
    return QuadratureRule(np.column_stack([xi, eta]), wt, degree)


def triangle_rule(degree: int) -> QuadratureRule:
    """Smallest available rule exact for polynomials of the given total degree."""
    if degree < 1:
        degree = 1
    for d in sorted(_SYMMETRIC_RULES):
        if d >= degree:
            rule = _SYMMETRIC_RULES[d]
            w = 0.5 * np.asarray([r[0] for r in rule])
            pts = _bary_to_ref([r[1] for r in rule])
            return QuadratureRule(pts, w, d)
    return _duffy_rule(degree)


# ---------------------------------------------------------------------------
# reference elements
# ---------------------------------------------------------------------------

class ReferenceElement:
    """Lagrange basis on the reference triangle.

    kind: "P1" | "P2" (continuous) or "DG0" | "DG1" (discontinuous).
    Local dof order for P2 is the three vertices followed by the midpoints of
    local edges (0,1), (1,2), (2,0).
    """

    def __init__(self, kind: str):
        if kind not in ("P1", "P2", "DG0", "DG1"):
            raise ValueError(f"unknown element kind {kind!r}")
        self.kind = kind
        self.continuous = kind in ("P1", "P2")
        self.degree = {"P1": 1, "P2": 2, "DG0": 0, "DG1": 1}[kind]
        if kind == "P2":
            self.nodes = np.array(
                [[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float
            )
        elif kind == "DG0":
            self.nodes = np.array([[1 / 3, 1 / 3]], dtype=float)
        else:
            self.nodes = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        self.ndof = len(self.nodes)

    def tabulate(self, points: np.ndarray) -> np.ndarray:
        """Basis values; shape (npoints, ndof)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        xi, eta = p[:, 0], p[:, 1]
        lam = np.column_stack([1.0 - xi - eta, xi, eta])
        if self.kind in ("P1", "DG1"):
            return lam
        if self.kind == "DG0":
            return np.ones((len(p), 1))
        l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
        return np.column_stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l2 * l0,
            ]
        )

    def tabulate_grad(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients; shape (npoints, ndof, 2)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(p)
        xi, eta = p[:, 0], p[:, 1]
        dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        if self.kind in ("P1", "DG1"):
            return np.broadcast_to(dlam, (n, 3, 2)).copy()
        if self.kind == "DG0":
            return np.zeros((n, 1, 2))
        lam = np.column_stack([1.0 - xi - eta, xi, eta])
        g = np.empty((n, 6, 2))
        for v in range(3):
            g[:, v, :] = (4 * lam[:, v] - 1)[:, None] * dlam[v]
        for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
            g[:, 3 + k, :] = 4 * (lam[:, i][:, None] * dlam[j] + lam[:, j][:, None] * dlam[i])
        return g


# ---------------------------------------------------------------------------
# dof maps and function spaces
# ---------------------------------------------------------------------------

class DofMap:
    """Global dof numbering for one scalar field on a mesh.

    P1: dofs are the vertices.  P2: vertices first, then one dof per mesh
    edge (vertex count + edge index).  DG spaces number element-locally.
    """

    def __init__(self, mesh: Mesh, elem: ReferenceElement):
        self.mesh = mesh
        self.elem = elem
        nt = mesh.num_triangles
        nv = mesh.num_vertices
        if elem.kind == "P1":
            self.cell_dofs = mesh.triangles.copy()
            self.ndof = nv
        elif elem.kind == "P2":
            uniq, lookup = mesh.edges()
            cd = np.empty((nt, 6), dtype=np.int64)
            cd[:, :3] = mesh.triangles
            for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
                a = np.minimum(mesh.triangles[:, i], mesh.triangles[:, j])
                b = np.maximum(mesh.triangles[:, i], mesh.triangles[:, j])
                cd[:, 3 + k] = [nv + lookup[(int(p), int(q))] for p, q in zip(a, b)]
            self.cell_dofs = cd
            self.ndof = nv + len(uniq)
        elif elem.kind == "DG0":
            self.cell_dofs = np.arange(nt, dtype=np.int64).reshape(-1, 1)
            self.ndof = nt
        else:  # DG1
            self.cell_dofs = np.arange(3 * nt, dtype=np.int64).reshape(-1, 3)
            self.ndof = 3 * nt

    def edge_dofs(self, v0: int, v1: int) -> np.ndarray:
        """Scalar dofs whose basis functions are nonzero on edge (v0, v1)."""
        if self.elem.kind == "P1":
            return np.array([v0, v1], dtype=np.int64)
        if self.elem.kind == "P2":
            _, lookup = self.mesh.edges()
            e = lookup[(min(v0, v1), max(v0, v1))]
            return np.array([v0, v1, self.mesh.num_vertices + e], dtype=np.int64)
        raise ValueError("edge dofs are only defined for continuous elements")


class FunctionSpace:
    """Scalar element space with cached geometry and basis tabulations."""

    def __init__(self, mesh: Mesh, kind: str):
        self.mesh = mesh
        self.elem = ReferenceElement(kind)
        self.dofmap = DofMap(mesh, self.elem)
        self.ndof = self.dofmap.ndof

        p = mesh.vertices
        t = mesh.triangles
        J = np.empty((mesh.num_triangles, 2, 2))
        J[:, :, 0] = p[t[:, 1]] - p[t[:, 0]]
        J[:, :, 1] = p[t[:, 2]] - p[t[:, 0]]
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        inv[:, 1, 1] = J[:, 0, 0]
        self.Jinv = inv / self.detJ[:, None, None]  # d(xi)/d(x)
        self.J = J
        self._tab = {}

    def tabulation(self, degree: int = 6):
        """(rule, phi, grad_phys, wdet) at a volume rule of the given degree.

        grad_phys has shape (ntri, nq, ndof_local, 2) and wdet (ntri, nq);
        wdet are quadrature weights scaled by |det J| so that sums over q
        produce physical integrals.
        """
        if degree not in self._tab:
            rule = triangle_rule(degree)
            phi = self.elem.tabulate(rule.points)
            gref = self.elem.tabulate_grad(rule.points)
            # d(phi)/dx_d = sum_k d(phi)/d(xi_k) * d(xi_k)/d(x_d)
            gphys = np.einsum("qbk,tkd->tqbd", gref, self.Jinv)
            wdet = rule.weights[None, :] * np.abs(self.detJ)[:, None]
            self._tab[degree] = (rule, phi, gphys, wdet)
        return self._tab[degree]

    def dof_coords(self) -> np.ndarray:
        """Physical coordinates of the nodal dofs (continuous spaces only)."""
        m = self.mesh
        if self.elem.kind == "P1":
            return m.vertices.copy()
        if self.elem.kind == "P2":
            uniq, _ = m.edges()
            mid = 0.5 * (m.vertices[uniq[:, 0]] + m.vertices[uniq[:, 1]])
            return np.vstack([m.vertices, mid])
        raise ValueError("DG spaces have no global nodal coordinates")

    def boundary_dofs_by_tag(self) -> dict:
        """Map BoundaryTag -> sorted array of scalar dofs on edges of that tag."""
        out = {}
        for (a, b), tag in zip(self.mesh.boundary_edges.tolist(), self.mesh.boundary_tags.tolist()):
            out.setdefault(int(tag), set()).update(self.dofmap.edge_dofs(a, b).tolist())
        return {t: np.asarray(sorted(s), dtype=np.int64) for t, s in out.items()}


# ---------------------------------------------------------------------------
# interpolation and point evaluation
# ---------------------------------------------------------------------------

def interpolate(space: FunctionSpace, f) -> np.ndarray:
    """Nodal interpolation (continuous) or elementwise L2 projection (DG).

    ``f(x, y)`` must accept numpy arrays.  For vector interpolation use
    :func:`interpolate_vector`.
    """
    if space.elem.continuous:
        c = space.dof_coords()
        return np.asarray(f(c[:, 0], c[:, 1]), dtype=float)
    rule, phi, _, wdet = space.tabulation(degree=max(4, 2 * space.elem.degree + 2))
    xq = _physical_points(space, rule.points)
    fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float)
    rhs = np.einsum("tq,tq,qi->ti", wdet, fq, phi)
    mloc = np.einsum("tq,qi,qj->tij", wdet, phi, phi)
    coeff = np.linalg.solve(mloc, rhs[..., None])[..., 0]
    out = np.zeros(space.ndof)
    out[space.dofmap.cell_dofs] = coeff
    return out


def interpolate_vector(space: FunctionSpace, f) -> np.ndarray:
    """Interpolate a vector field; returns stacked (x block, y block)."""
    if space.elem.continuous:
        c = space.dof_coords()
        fx, fy = f(c[:, 0], c[:, 1])
        return np.concatenate([np.asarray(fx, dtype=float), np.asarray(fy, dtype=float)])
    u = interpolate(space, lambda x, y: f(x, y)[0])
    v = interpolate(space, lambda x, y: f(x, y)[1])
    return np.concatenate([u, v])


def _physical_points(space: FunctionSpace, ref_points: np.ndarray) -> np.ndarray:
    """Map reference points to all triangles; shape (ntri, nq, 2)."""
    p0 = space.mesh.vertices[space.mesh.triangles[:, 0]]
    return p0[:, None, :] + np.einsum("tdk,qk->tqd", space.J, ref_points)


def locate_point(mesh: Mesh, x, tol: float = 1e-12) -> tuple[int, np.ndarray]:
    """Find a triangle containing the point; returns (index, reference coords)."""
    pt = np.asarray(x, dtype=float)
    p = mesh.vertices
    t = mesh.triangles
    for k in range(mesh.num_triangles):
        a, b, c = p[t[k]]
        M = np.column_stack([b - a, c - a])
        ref = np.linalg.solve(M, pt - a)
        if ref[0] >= -tol and ref[1] >= -tol and ref.sum() <= 1 + tol:
            return k, ref
    raise ValueError(f"point {pt.tolist()} lies outside the mesh")


def evaluate(space: FunctionSpace, coeffs: np.ndarray, x, tri: int | None = None):
    """Evaluate a field and its gradient at one physical point.

    Scalar coefficients give (value, grad[2]); stacked vector coefficients
    give (value[2], grad[2, 2]) with grad[a, b] = d(u_a)/d(x_b).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if tri is None:
        tri, ref = locate_point(space.mesh, x)
    else:
        a = space.mesh.vertices[space.mesh.triangles[tri, 0]]
        ref = space.Jinv[tri] @ (np.asarray(x, dtype=float) - a)
    phi = space.elem.tabulate(ref[None, :])[0]
    gref = space.elem.tabulate_grad(ref[None, :])[0]
    gphys = gref @ space.Jinv[tri]
    dofs = space.dofmap.cell_dofs[tri]
    if coeffs.size == space.ndof:
        return phi @ coeffs[dofs], gphys.T @ coeffs[dofs]
    if coeffs.size == 2 * space.ndof:
        val = np.array([phi @ coeffs[dofs], phi @ coeffs[space.ndof + dofs]])
        grad = np.vstack([coeffs[dofs] @ gphys, coeffs[space.ndof + dofs] @ gphys])
        return val, grad
    raise ValueError("coefficient array length matches neither a scalar nor a vector field")


# ---------------------------------------------------------------------------
# Dirichlet constraints
# ---------------------------------------------------------------------------

class VelocityBC:
    """Dirichlet bookkeeping for one subdomain's vector velocity space.

    ``data`` maps BoundaryTag values to ``f(x, y, t) -> (ux, uy)`` (or None
    for homogeneous).  Edges tagged INTERFACE get only their y component
    pinned to zero, matching an impermeable horizontal interface; a dof also
    lying on a fully pinned boundary is fully pinned.
    """

    def __init__(self, space: FunctionSpace, data: dict, pin_interface_normal: bool = True):
        self.space = space
        coords = space.dof_coords()
        by_tag = space.boundary_dofs_by_tag()
        pinned = {}  # vector dof -> (tag or None, scalar dof)
        if pin_interface_normal and int(BoundaryTag.INTERFACE) in by_tag:
            for sd in by_tag[int(BoundaryTag.INTERFACE)]:
                pinned[space.ndof + int(sd)] = (None, int(sd))
        for tag, sdofs in by_tag.items():
            if tag == int(BoundaryTag.INTERFACE):
                continue
            if tag not in data:
                raise ValueError(f"no boundary data for tag {BoundaryTag(tag).name}")
            for sd in sdofs:
                pinned[int(sd)] = (tag, int(sd))
                pinned[space.ndof + int(sd)] = (tag, int(sd))
        self.dofs = np.asarray(sorted(pinned), dtype=np.int64)
        self._data = dict(data)
        # group constrained dofs by (tag, component) for vectorized evaluation
        groups = {}
        n = space.ndof
        for k, d in enumerate(self.dofs):
            tag, sd = pinned[int(d)]
            if tag is None or data.get(tag) is None:
                continue
            groups.setdefault((tag, 0 if d < n else 1), []).append((k, sd))
        self._groups = [
            (
                tag,
                comp,
                np.asarray([k for k, _ in entries], dtype=np.int64),
                coords[np.asarray([sd for _, sd in entries], dtype=np.int64)],
            )
            for (tag, comp), entries in sorted(groups.items())
        ]

    def values(self, t: float) -> np.ndarray:
        """Prescribed values for each constrained vector dof at time t."""
        out = np.zeros(len(self.dofs))
        for tag, comp, pos, xy in self._groups:
            ux, uy = self._data[tag](xy[:, 0], xy[:, 1], t)
            out[pos] = ux if comp == 0 else uy
        return out


def apply_constraints(A, b: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """Replace rows of a sparse system by identity equations dof = value.

    Returns (A_csr, b); the inputs are not modified.
    """
    import scipy.sparse as sp

    A = A.tocsr().copy()
    b = b.copy()
    if len(dofs):
        mask = np.concatenate(
            [np.arange(A.indptr[d], A.indptr[d + 1]) for d in np.asarray(dofs)]
        )
        A.data[mask] = 0.0
        ident = sp.coo_matrix(
            (np.ones(len(dofs)), (dofs, dofs)), shape=A.shape
        ).tocsr()
        A = A + ident
        b[dofs] = values
    return A, b
