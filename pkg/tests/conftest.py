import numpy as np
import pytest

from killingfem.mesh import OUTER, DomainSpec, Mesh, build_hierarchy


def single_triangle(p=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))):
    return Mesh(np.array(p), [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [OUTER] * 3)


def two_triangles():
    verts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    return Mesh(verts, [[0, 1, 2], [0, 2, 3]], [[0, 1], [1, 2], [2, 3], [3, 0]], [OUTER] * 4)


def unit_square(levels=1):
    """Mesh of (0, 1)^2: the h=1 mesh of (-1/2, 1/2)^2 shifted by (1/2, 1/2)."""
    m = build_hierarchy(DomainSpec.square(0.5), 1.0, levels)[-1]
    return Mesh(m.vertices + 0.5, m.triangles, m.boundary_edges, m.boundary_markers, level=m.level)


def gauss_triangle(n):
    """Collapsed Gauss-Legendre rule on the reference triangle, exact to degree 2n - 2."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = (v * (1 - u)).ravel()
    return np.column_stack([xi, eta]), (wu * wv * (1 - u)).ravel()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
