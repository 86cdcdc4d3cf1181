"""Continuous Lagrange spaces of degree 1-3 on triangle meshes.

Local node order on the reference triangle: the three vertices, then the
``k - 1`` nodes on each of the edges (0,1), (1,2), (2,0) running from the
first to the second vertex, then interior nodes. Global numbering puts all
vertex dofs first, then edge dofs in global edge order (each edge numbered
from its lower to its higher vertex index), then interior dofs.

Vector spaces use blocked numbering: dof ``c * nscalar + i`` is component
``c`` of scalar dof ``i``.
"""

from functools import cached_property, lru_cache

import numpy as np

from .errors import EvaluationError
from .mesh import _LOCAL_EDGES

SUPPORTED_DEGREES = (1, 2, 3)


def _check_degree(k):
    if k not in SUPPORTED_DEGREES:
        raise ValueError(f"unsupported Lagrange degree {k!r}; expected one of {SUPPORTED_DEGREES}")


@lru_cache(maxsize=None)
def reference_nodes(k):
    """Barycentric coordinates of the local nodes, shape (nloc, 3)."""
    _check_degree(k)
    eye = np.eye(3)
    nodes = [eye[0], eye[1], eye[2]]
    for a, b in _LOCAL_EDGES:
        for i in range(1, k):
            nodes.append(((k - i) * eye[a] + i * eye[b]) / k)
    for i in range(1, k):
        for j in range(1, k - i):
            nodes.append(np.array([k - i - j, i, j], dtype=float) / k)
    return np.array(nodes)


@lru_cache(maxsize=None)
def _monomial_basis(k):
    exps = [(p, q) for total in range(k + 1) for q in range(total + 1) for p in [total - q]]
    nodes = reference_nodes(k)[:, 1:]
    vander = np.array([[x**p * y**q for (p, q) in exps] for x, y in nodes])
    coeffs = np.linalg.inv(vander)  # column i gives basis i in monomials
    return np.array(exps), coeffs


def ref_basis(k, points):
    """Basis values and reference gradients at reference points.

    Parameters
    ----------
    k : int
    points : array_like, shape (nq, 2)
        Reference coordinates (xi, eta).

    Returns
    -------
    values : ndarray, shape (nq, nloc)
    grads : ndarray, shape (nq, nloc, 2)
    """
    _check_degree(k)
    exps, coeffs = _monomial_basis(k)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, :1], pts[:, 1:]
    p, q = exps[:, 0], exps[:, 1]
    mono = x**p * y**q
    dx = np.where(p > 0, p * x ** np.maximum(p - 1, 0), 0.0) * y**q
    dy = np.where(q > 0, q * y ** np.maximum(q - 1, 0), 0.0) * x**p
    values = mono @ coeffs
    grads = np.stack([dx @ coeffs, dy @ coeffs], axis=-1)
    return values, grads


def ref_basis_eval(k, bary):
    """Values (nloc,) and reference gradients (nloc, 2) at one barycentric point."""
    bary = np.asarray(bary, dtype=float)
    values, grads = ref_basis(k, bary[1:].reshape(1, 2))
    return values[0], grads[0]


class FESpace:
    """Degree-``k`` continuous Lagrange space with ``ncomp`` components."""

    def __init__(self, mesh, degree, ncomp=1):
        _check_degree(degree)
        if ncomp not in (1, 2):
            raise ValueError("ncomp must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.ncomp = ncomp
        k = degree
        nv, ne, nt = mesh.nvertices, mesh.nedges, mesh.ntriangles
        nint = (k - 1) * (k - 2) // 2
        self.nscalar = nv + ne * (k - 1) + nt * nint
        self.ndofs = ncomp * self.nscalar

        tris = mesh.triangles
        cols = [tris]
        if k > 1:
            te = mesh.triangle_edges
            for l, (a, b) in enumerate(_LOCAL_EDGES):
                forward = tris[:, a] < tris[:, b]
                base = nv + te[:, l] * (k - 1)
                idx = np.arange(k - 1)
                cols.append(base[:, None] + np.where(forward[:, None], idx, k - 2 - idx))
        if nint:
            cols.append(nv + ne * (k - 1) + np.arange(nt)[:, None] * nint + np.arange(nint))
        self.cell_dofs = np.hstack(cols)
        self.cell_dofs.setflags(write=False)

    def __repr__(self):
        kind = "vector" if self.ncomp == 2 else "scalar"
        return f"FESpace(P{self.degree} {kind}, ndofs={self.ndofs})"

    @property
    def nloc(self):
        return self.cell_dofs.shape[1]

    def vector(self):
        """Two-component space with the same scalar numbering."""
        return FESpace(self.mesh, self.degree, ncomp=2)

    def scalar(self):
        return FESpace(self.mesh, self.degree, ncomp=1)

    @cached_property
    def dof_coords(self):
        """Coordinates of scalar dofs, shape (nscalar, 2)."""
        nodes = reference_nodes(self.degree)[:, 1:]
        phys = self.mesh.map_to_physical(np.arange(self.mesh.ntriangles), nodes)
        coords = np.empty((self.nscalar, 2))
        coords[self.cell_dofs.ravel()] = phys.reshape(-1, 2)
        coords[: self.mesh.nvertices] = self.mesh.vertices
        coords.setflags(write=False)
        return coords

    def component(self, coeffs, c):
        """View of component ``c`` of a vector coefficient array."""
        return coeffs[c * self.nscalar:(c + 1) * self.nscalar]

    def _stack(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.ndofs:
            raise ValueError(f"coefficient length {coeffs.shape[0]} != ndofs {self.ndofs}")
        return coeffs.reshape(self.ncomp, self.nscalar, *coeffs.shape[1:])

    def tabulate(self, tri, ref_points):
        """Basis values (nq, nloc) and physical gradients (len(tri), nq, nloc, 2)."""
        values, grads = ref_basis(self.degree, ref_points)
        inv = self.mesh.inverse_jacobians[tri]
        phys = np.einsum("tji,qlj->tqli", inv, grads)
        return values, phys

    def evaluate_at(self, coeffs, tri, bary):
        """Evaluate a finite element function at many (triangle, barycentric) pairs.

        Returns
        -------
        values : ndarray, shape (n,) or (n, 2) for vector spaces
        grads : ndarray, shape (n, 2) or (n, 2, 2); for vectors ``grads[:, i, j]``
            is the derivative of component ``i`` in direction ``j``.
        """
        tri = np.asarray(tri, dtype=np.int64).reshape(-1)
        bary = np.asarray(bary, dtype=float).reshape(-1, 3)
        comps = self._stack(coeffs)
        values, grads = ref_basis(self.degree, bary[:, 1:])  # (n, nloc), (n, nloc, 2)
        inv = self.mesh.inverse_jacobians[tri]
        phys = np.einsum("nji,nlj->nli", inv, grads)
        local = comps[:, self.cell_dofs[tri]]  # (ncomp, n, nloc)
        val = np.einsum("cnl,nl->nc", local, values)
        grad = np.einsum("cnl,nli->nci", local, phys)
        if self.ncomp == 1:
            return val[:, 0], grad[:, 0]
        return val, grad


def build_space(mesh, k, ncomp=1):
    """Continuous Lagrange space of degree ``k`` on ``mesh``."""
    return FESpace(mesh, k, ncomp=ncomp)


def evaluate(space, coeffs, tri, bary):
    """Value and physical gradient of a finite element function at one point."""
    val, grad = space.evaluate_at(coeffs, [tri], [bary])
    return val[0], grad[0]


def interpolate(space, f):
    """Nodal interpolant of ``f``.

    ``f`` maps an array of points (n, 2) to values (n,) for scalar spaces or
    (n, 2) for vector spaces. Constants are accepted as well.
    """
    pts = space.dof_coords
    if callable(f):
        vals = np.asarray(f(pts), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), (len(pts),) + np.shape(f)).copy()
    if space.ncomp == 1:
        vals = vals.reshape(len(pts))
    else:
        vals = vals.reshape(len(pts), 2)
    if not np.all(np.isfinite(vals)):
        bad = np.nonzero(~np.isfinite(vals).reshape(len(pts), -1).all(axis=1))[0][0]
        raise EvaluationError(f"interpolated function is not finite at {tuple(pts[bad])}")
    return vals.T.reshape(-1).copy() if space.ncomp == 2 else vals.copy()
