import numpy as np
import pytest

from ddcflow.fem import FunctionSpace
from ddcflow.mesh import Mesh, build_interface_pairing, generate_rect_mesh


@pytest.fixture(scope="session")
def square2():
    """Unit square split into two triangles."""
    return generate_rect_mesh(1, 1, (0.0, 1.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def skew_mesh():
    """Two-triangle quad with no right angles, to exercise the Jacobians."""
    verts = np.array([[0.0, 0.0], [1.1, 0.1], [0.2, 1.3], [1.4, 1.2]])
    tris = np.array([[0, 1, 2], [1, 3, 2]], dtype=np.int64)
    edges = np.array([[0, 1], [1, 3], [3, 2], [2, 0]], dtype=np.int64)
    tags = np.ones(4, dtype=np.int64)  # all WALL
    m = Mesh(verts, tris, edges, tags)
    m.validate()
    return m


@pytest.fixture(scope="session")
def coupled_pair():
    """Two matched 4-triangle meshes meeting along y = 0, with pairing."""
    m1 = generate_rect_mesh(2, 1, (0.0, 1.0, 0.0, 1.0))
    m2 = generate_rect_mesh(2, 1, (0.0, 1.0, -1.0, 0.0))
    return m1, m2, build_interface_pairing(m1, m2)


@pytest.fixture(scope="session")
def coupled_spaces(coupled_pair):
    m1, m2, pairing = coupled_pair
    return FunctionSpace(m1, "P2"), FunctionSpace(m2, "P2"), pairing
