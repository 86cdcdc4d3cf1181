"""Conforming triangle meshes of the computational domains.

Four built-in domain families are supported, all centred at the origin:

* ``square(a)``: the open square (-a, a)^2,
* ``square_minus_disc(a, r)``: the square with the closed disc of radius r removed,
* ``square_minus_square(a, b)``: the square with [-b, b]^2 removed,
* ``square_minus_rectangle(a, b, c)``: the square with [-b, b] x [-c, c] removed.

Meshes are immutable. Uniform refinement is red (midpoint quadrisection);
midpoints of edges on a circular hole are projected onto the circle.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, MeshParseError

logger = logging.getLogger(__name__)

OUTER = 1
INNER = 2

_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True)
class DomainSpec:
    """Description of a computational domain.

    ``variant`` is one of ``square``, ``square_minus_disc``,
    ``square_minus_square``, ``square_minus_rectangle`` or ``external``. ``a``
    is the half-width of the outer square, ``r`` the hole radius, ``b`` the
    half-width of a square or rectangular hole, ``c`` the half-height of a
    rectangular hole, ``path`` a mesh file for the external variant.
    """

    variant: str
    a: float = 4.0 / 3.0
    r: float = None
    b: float = None
    path: str = None
    c: float = None

    def __post_init__(self):
        self.validate()

    @classmethod
    def square(cls, a=4.0 / 3.0):
        return cls("square", a=a)

    @classmethod
    def square_minus_disc(cls, a=4.0 / 3.0, r=0.2):
        return cls("square_minus_disc", a=a, r=r)

    @classmethod
    def square_minus_square(cls, a=4.0 / 3.0, b=0.4):
        return cls("square_minus_square", a=a, b=b)

    @classmethod
    def square_minus_rectangle(cls, a=4.0 / 3.0, b=0.9, c=0.12):
        return cls("square_minus_rectangle", a=a, b=b, c=c)

    @classmethod
    def external(cls, path):
        return cls("external", path=str(path))

    def validate(self):
        v = self.variant
        if v == "external":
            if not self.path:
                raise ConfigError("external domain needs a mesh file path")
            return
        if v not in ("square", "square_minus_disc", "square_minus_square", "square_minus_rectangle"):
            raise ConfigError(f"unknown domain variant {v!r}")
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ConfigError(f"half-width a must be positive, got {self.a}")
        if v == "square_minus_disc":
            if self.r is None or not (0 < self.r < self.a):
                raise ConfigError(f"hole radius must satisfy 0 < r < a, got r={self.r}, a={self.a}")
        if v == "square_minus_square":
            if self.b is None or not (0 < self.b < self.a):
                raise ConfigError(f"inner half-width must satisfy 0 < b < a, got b={self.b}, a={self.a}")
        if v == "square_minus_rectangle":
            for name in ("b", "c"):
                val = getattr(self, name)
                if val is None or not (0 < val < self.a):
                    raise ConfigError(f"hole half-size must satisfy 0 < {name} < a, got {name}={val}, a={self.a}")

    @property
    def area(self):
        """Exact area of the (non-polygonized) domain."""
        full = (2 * self.a) ** 2
        if self.variant == "square":
            return full
        if self.variant == "square_minus_disc":
            return full - math.pi * self.r**2
        if self.variant == "square_minus_square":
            return full - (2 * self.b) ** 2
        if self.variant == "square_minus_rectangle":
            return full - 4 * self.b * self.c
        raise ConfigError("area of an external domain is not known")

    def contains(self, points):
        """Boolean mask of points inside the open domain."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = (np.abs(p[:, 0]) < self.a) & (np.abs(p[:, 1]) < self.a)
        if self.variant == "square_minus_disc":
            inside &= np.hypot(p[:, 0], p[:, 1]) > self.r
        elif self.variant == "square_minus_square":
            inside &= ~((np.abs(p[:, 0]) <= self.b) & (np.abs(p[:, 1]) <= self.b))
        elif self.variant == "square_minus_rectangle":
            inside &= ~((np.abs(p[:, 0]) <= self.b) & (np.abs(p[:, 1]) <= self.c))
        return inside

    def to_dict(self):
        d = {"variant": self.variant}
        for key in ("a", "r", "b", "c", "path"):
            value = getattr(self, key)
            if value is not None and not (key == "a" and self.variant == "external"):
                d[key] = value
        return d


class Mesh:
    """Conforming triangulation.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like of int, shape (nt, 3)
        Counter-clockwise vertex indices.
    boundary_edges : array_like of int, shape (nb, 2)
    boundary_markers : array_like of int, shape (nb,)
        ``OUTER`` (1) or ``INNER`` (2) for the built-in domains.
    circle : tuple (cx, cy, r), optional
        Circle onto which midpoints of ``INNER`` edges are projected on refinement.
    level : int
        Refinement generation.
    triangle_markers : array_like of int, optional
    """

    def __init__(self, vertices, triangles, boundary_edges, boundary_markers,
                 circle=None, level=0, triangle_markers=None):
        self.vertices = _frozen(np.asarray(vertices, dtype=float).reshape(-1, 2))
        self.triangles = _frozen(np.asarray(triangles, dtype=np.int64).reshape(-1, 3))
        self.boundary_edges = _frozen(np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2))
        self.boundary_markers = _frozen(np.asarray(boundary_markers, dtype=np.int64).reshape(-1))
        if triangle_markers is None:
            triangle_markers = np.zeros(len(self.triangles), dtype=np.int64)
        self.triangle_markers = _frozen(np.asarray(triangle_markers, dtype=np.int64).reshape(-1))
        self.circle = None if circle is None else tuple(float(c) for c in circle)
        self.level = int(level)
        if len(self.boundary_edges) != len(self.boundary_markers):
            raise ValueError("boundary edges and markers differ in length")

    def __repr__(self):
        return (f"Mesh(nvertices={self.nvertices}, ntriangles={self.ntriangles}, "
                f"level={self.level}, h={self.h:.4g})")

    @property
    def nvertices(self):
        return len(self.vertices)

    @property
    def ntriangles(self):
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        local = self.triangles[:, _LOCAL_EDGES]  # (nt, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        return _frozen(edges), _frozen(inverse.reshape(-1, 3)), _frozen(counts)

    @property
    def edges(self):
        """Unique edges as sorted vertex pairs, in lexicographic order."""
        return self._edge_data[0]

    @property
    def triangle_edges(self):
        """Global edge index of local edges (0,1), (1,2), (2,0) of each triangle."""
        return self._edge_data[1]

    @property
    def nedges(self):
        return len(self.edges)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self):
        return float(np.sum(self.signed_areas()))

    def diameters(self):
        """Longest edge length of every triangle."""
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)
        return lengths.max(axis=1)

    @property
    def h(self):
        """Maximal element diameter."""
        return float(self.diameters().max())

    def angles(self):
        """Interior angles in degrees, shape (nt, 3)."""
        p = self.vertices[self.triangles]
        out = np.empty((self.ntriangles, 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return out

    def min_angle(self):
        return float(self.angles().min())

    def check_conformity(self):
        """Return True when interior edges have 2 triangles and boundary edges 1."""
        counts = self._edge_data[2]
        if np.any(counts > 2):
            return False
        boundary = self.edges[counts == 1]
        declared = np.unique(np.sort(self.boundary_edges, axis=1), axis=0)
        if len(boundary) != len(declared):
            return False
        return bool(np.array_equal(boundary, declared))

    @cached_property
    def jacobians(self):
        """Affine map Jacobians ``[p1 - p0, p2 - p0]`` (columns), shape (nt, 2, 2)."""
        p = self.vertices[self.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return _frozen(jac)

    @cached_property
    def inverse_jacobians(self):
        return _frozen(np.linalg.inv(self.jacobians))

    @cached_property
    def determinants(self):
        return _frozen(np.linalg.det(self.jacobians))

    def map_to_physical(self, tri, ref_points):
        """Physical coordinates of reference points, shape (len(tri), nq, 2)."""
        tri = np.asarray(tri)
        p0 = self.vertices[self.triangles[tri, 0]]
        return p0[:, None, :] + np.einsum("tij,qj->tqi", self.jacobians[tri], ref_points)

    def boundary_vertices(self, marker=None):
        edges = self.boundary_edges
        if marker is not None:
            edges = edges[self.boundary_markers == marker]
        return np.unique(edges)

    @cached_property
    def locator(self):
        return PointLocator(self)

    def locate(self, points, tol=1e-10, clamp=0.0):
        """Vectorized point location, see :meth:`PointLocator.locate`."""
        return self.locator.locate(points, tol=tol, clamp=clamp)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _orient_ccw(vertices, triangles):
    triangles = np.array(triangles, dtype=np.int64)
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    triangles[neg] = triangles[neg][:, [0, 2, 1]]
    return triangles, int(neg.sum())


def _boundary_from_triangles(triangles):
    """Boundary edges oriented as in their (counter-clockwise) triangle."""
    local = triangles[:, _LOCAL_EDGES].reshape(-1, 2)
    key = np.sort(local, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return local[counts[inverse.reshape(-1)] == 1]


def _compact(vertices, triangles):
    used = np.unique(triangles)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[triangles]


def _grid_mesh(xs, ys, keep, a):
    """Union-jack triangulation of the kept cells of a tensor grid."""
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            if not keep[j, i]:
                continue
            v00 = j * (nx + 1) + i
            v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
            if (i + j) % 2 == 0:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    vertices, triangles = _compact(vertices, np.array(tris, dtype=np.int64))
    bedges = _boundary_from_triangles(triangles)
    mid = vertices[bedges].mean(axis=1)
    on_outer = np.isclose(np.abs(mid), a, rtol=0, atol=1e-12 * a).any(axis=1)
    markers = np.where(on_outer, OUTER, INNER)
    return vertices, triangles, bedges, markers


def _segment_breaks(lo, hi, spacing):
    n = max(1, math.ceil((hi - lo) / spacing - 1e-9))
    return np.linspace(lo, hi, n + 1)


def _square_radius(theta, a):
    return a / np.maximum(np.abs(np.cos(theta)), np.abs(np.sin(theta)))


def _annulus_mesh(a, r, n_outer, n_inner):
    """Graded ring mesh between a circle of radius r and the square of half-width a.

    Rings sit on rays from the origin at uniformly spaced angles starting at a
    corner. The innermost ring has ``n_inner`` rays; the count halves across
    transition layers down to ``n_outer`` (a multiple of 4). Ring radii grow
    geometrically so cells stay close to square-shaped.
    """
    total = float(np.mean(np.log(_square_radius(np.linspace(0, 2 * np.pi, 721), a) / r)))
    rings = [(0.0, n_inner)]
    tau, n = 0.0, n_inner
    while n > n_outer:
        tau += 2 * np.pi / n
        rings.append((tau, n))
        tau += 1.5 * 2 * np.pi / n
        n //= 2
        rings.append((tau, n))
    while tau + 0.5 * 2 * np.pi / n < total or len(rings) < 2:
        tau += 2 * np.pi / n
        rings.append((tau, n))
    last = rings[-1][0]

    vertices, offsets = [], []
    count = 0
    for j, (tau_j, n_j) in enumerate(rings):
        theta = -np.pi / 4 + 2 * np.pi * np.arange(n_j) / n_j
        R = _square_radius(theta, a)
        rho = r * (R / r) ** (tau_j / last)
        pts = rho[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
        if j == len(rings) - 1:
            # snap exactly onto the square sides
            big = np.abs(pts).argmax(axis=1)
            pts[np.arange(n_j), big] = np.sign(pts[np.arange(n_j), big]) * a
            corner = np.isclose(np.abs(pts[:, 0]), np.abs(pts[:, 1]))
            pts[corner] = np.sign(pts[corner]) * a
        offsets.append(count)
        count += n_j
        vertices.append(pts)
    vertices = np.vstack(vertices)

    tris = []
    for j in range(len(rings) - 1):
        n_in, n_out = rings[j][1], rings[j + 1][1]
        o_in, o_out = offsets[j], offsets[j + 1]
        if n_in == n_out:
            for i in range(n_in):
                a0, a1 = o_in + i, o_in + (i + 1) % n_in
                b0, b1 = o_out + i, o_out + (i + 1) % n_out
                if np.linalg.norm(vertices[a0] - vertices[b1]) <= np.linalg.norm(vertices[a1] - vertices[b0]):
                    tris += [(a0, a1, b1), (a0, b1, b0)]
                else:
                    tris += [(a0, a1, b0), (a1, b1, b0)]
        else:
            for i in range(n_out):
                a0, a1, a2 = (o_in + (2 * i + s) % n_in for s in range(3))
                b0, b1 = o_out + i, o_out + (i + 1) % n_out
                tris += [(a0, a1, b0), (a1, b1, b0), (a1, a2, b1)]
    triangles, _ = _orient_ccw(vertices, tris)
    bedges = _boundary_from_triangles(triangles)
    mid = vertices[bedges].mean(axis=1)
    markers = np.where(np.hypot(mid[:, 0], mid[:, 1]) < 0.5 * (r + a), INNER, OUTER)
    return vertices, triangles, bedges, markers


def generate_mesh(domain, target_h, min_angle=15.0):
    """Build an initial mesh of ``domain`` with element diameters at most ``target_h``.

    Parameters
    ----------
    domain : DomainSpec
    target_h : float
        Requested maximal element diameter. The result satisfies
        ``mesh.h <= 1.5 * target_h`` (in practice ``<= target_h``).
    min_angle : float
        Lower bound on interior angles (degrees) for the generated mesh.
    """
    if not target_h > 0:
        raise ConfigError(f"target_h must be positive, got {target_h}")
    domain.validate()
    a = domain.a
    if domain.variant == "external":
        return read_mesh(domain.path)

    if domain.variant == "square":
        n = math.ceil(2 * a * math.sqrt(2) / target_h - 1e-9)
        xs = np.linspace(-a, a, n + 1)
        keep = np.ones((n, n), dtype=bool)
        mesh = Mesh(*_grid_mesh(xs, xs, keep, a))
    elif domain.variant in ("square_minus_square", "square_minus_rectangle"):
        b = domain.b
        c = b if domain.variant == "square_minus_square" else domain.c
        spacing = target_h / math.sqrt(2)

        def breaks(half):
            return np.unique(np.concatenate([
                _segment_breaks(-a, -half, spacing),
                _segment_breaks(-half, half, spacing),
                _segment_breaks(half, a, spacing),
            ]))
        xs, ys = breaks(b), breaks(c)
        cx, cy = np.meshgrid(0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1]))
        keep = ~((np.abs(cx) < b) & (np.abs(cy) < c))
        mesh = Mesh(*_grid_mesh(xs, ys, keep, a))
    else:
        r = domain.r
        mesh = None
        for m in range(1, 1024):
            n_outer = 4 * m
            # at least 24 rays on the hole keeps snapped elements shape regular
            n_inner = n_outer * 2 ** max(0, math.ceil(math.log2(24 / n_outer)))
            cand = Mesh(*_annulus_mesh(a, r, n_outer, n_inner), circle=(0.0, 0.0, r))
            if cand.h <= target_h and cand.min_angle() >= max(min_angle, 20.0):
                mesh = cand
                break
        if mesh is None:
            raise ConfigError(f"could not mesh {domain} at target_h={target_h}")

    if mesh.h > 1.5 * target_h or mesh.min_angle() < min_angle:
        raise ConfigError(f"mesh generation for {domain} failed quality checks")
    logger.debug("generated %r for %s", mesh, domain.variant)
    return mesh


def refine_uniform(mesh):
    """Red refinement: split every triangle into four through its edge midpoints.

    Midpoints of boundary edges marked ``INNER`` are projected onto
    ``mesh.circle`` when the mesh carries one.
    """
    nv = mesh.nvertices
    edges = mesh.edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    if mesh.circle is not None and len(mesh.boundary_edges):
        cx, cy, rad = mesh.circle
        inner = mesh.boundary_edges[mesh.boundary_markers == INNER]
        if len(inner):
            key = np.sort(inner, axis=1)
            idx = _edge_index(edges, key)
            d = mids[idx] - (cx, cy)
            mids[idx] = (cx, cy) + rad * d / np.linalg.norm(d, axis=1)[:, None]
    vertices = np.vstack([mesh.vertices, mids])

    t = mesh.triangles
    te = mesh.triangle_edges + nv  # midpoints of (0,1), (1,2), (2,0)
    m01, m12, m20 = te[:, 0], te[:, 1], te[:, 2]
    children = np.stack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    tmarkers = np.repeat(mesh.triangle_markers, 4)

    be = mesh.boundary_edges
    bmid = _edge_index(edges, np.sort(be, axis=1)) + nv
    bedges = np.stack([np.column_stack([be[:, 0], bmid]), np.column_stack([bmid, be[:, 1]])],
                      axis=1).reshape(-1, 2)
    bmarkers = np.repeat(mesh.boundary_markers, 2)
    return Mesh(vertices, children, bedges, bmarkers, circle=mesh.circle,
                level=mesh.level + 1, triangle_markers=tmarkers)


def _edge_index(edges, keys):
    """Row index in the lexicographically sorted ``edges`` of each sorted key pair."""
    nv = int(max(edges.max(), keys.max())) + 1
    code = edges[:, 0] * nv + edges[:, 1]
    kcode = keys[:, 0] * nv + keys[:, 1]
    idx = np.searchsorted(code, kcode)
    if np.any(idx >= len(code)) or np.any(code[np.minimum(idx, len(code) - 1)] != kcode):
        raise ValueError("edge not found in mesh")
    return idx


def build_hierarchy(domain, target_h, levels):
    """Initial mesh followed by ``levels`` uniform refinements."""
    meshes = [generate_mesh(domain, target_h)]
    for _ in range(levels):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


class PointLocator:
    """Bucket-grid point location on a triangle mesh."""

    def __init__(self, mesh, cell_size=None):
        self.mesh = mesh
        v = mesh.vertices
        p = v[mesh.triangles]
        self.lo = v.min(axis=0)
        hi = v.max(axis=0)
        if cell_size is None:
            cell_size = float(np.mean(mesh.diameters()))
        self.cell = cell_size
        self.shape = np.maximum(np.ceil((hi - self.lo) / cell_size).astype(int), 1)
        tlo = np.floor((p.min(axis=1) - self.lo) / cell_size).astype(int)
        thi = np.floor((p.max(axis=1) - self.lo) / cell_size).astype(int)
        tlo = np.clip(tlo, 0, self.shape - 1)
        thi = np.clip(thi, 0, self.shape - 1)
        span = thi - tlo
        cells, owners = [], []
        tri_ids = np.arange(mesh.ntriangles)
        for dx in range(int(span[:, 0].max()) + 1):
            for dy in range(int(span[:, 1].max()) + 1):
                ok = (span[:, 0] >= dx) & (span[:, 1] >= dy)
                cx = tlo[ok, 0] + dx
                cy = tlo[ok, 1] + dy
                cells.append(cy * self.shape[0] + cx)
                owners.append(tri_ids[ok])
        cells = np.concatenate(cells)
        owners = np.concatenate(owners)
        order = np.lexsort((owners, cells))
        self.owners = owners[order]
        ncell = int(self.shape[0] * self.shape[1])
        self.starts = np.zeros(ncell + 1, dtype=np.int64)
        np.add.at(self.starts, cells + 1, 1)
        self.starts = np.cumsum(self.starts)
        self.p0 = p[:, 0]
        self.inv = mesh.inverse_jacobians

    def _cell_of(self, points):
        ij = np.floor((points - self.lo) / self.cell).astype(np.int64)
        return ij

    def _candidates(self, points, radius=0):
        ij = self._cell_of(points)
        pid_list, tri_list = [], []
        for dx in range(-radius, radius + 1):
            for dy in range(-radius, radius + 1):
                cx = ij[:, 0] + dx
                cy = ij[:, 1] + dy
                ok = (cx >= 0) & (cy >= 0) & (cx < self.shape[0]) & (cy < self.shape[1])
                pid = np.nonzero(ok)[0]
                c = cy[ok] * self.shape[0] + cx[ok]
                start, stop = self.starts[c], self.starts[c + 1]
                count = stop - start
                rep = np.repeat(pid, count)
                offs = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
                pid_list.append(rep)
                tri_list.append(self.owners[np.repeat(start, count) + offs])
        return np.concatenate(pid_list), np.concatenate(tri_list)

    def barycentric(self, tri, points):
        ref = np.einsum("nij,nj->ni", self.inv[tri], points - self.p0[tri])
        return np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])

    def locate(self, points, tol=1e-10, clamp=0.0):
        """Locate points in the mesh.

        Parameters
        ----------
        points : array_like, shape (n, 2)
        tol : float
            Points whose smallest barycentric coordinate is ``>= -tol`` count as inside.
        clamp : float
            Points outside the mesh but within this distance of a triangle are
            assigned to the nearest triangle; their barycentric coordinates then
            extrapolate the element map.

        Returns
        -------
        tri : ndarray of int, shape (n,)
            Triangle index, -1 when not found.
        bary : ndarray, shape (n, 3)
            Barycentric coordinates (NaN when not found).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        tri = -np.ones(n, dtype=np.int64)
        bary = np.full((n, 3), np.nan)
        if n == 0:
            return tri, bary
        pid, cand = self._candidates(points)
        if len(pid):
            b = self.barycentric(cand, points[pid])
            score = b.min(axis=1)
            inside = score >= -tol
            pid, cand, b, score = pid[inside], cand[inside], b[inside], score[inside]
            # best (most interior) candidate per point, ties broken by triangle index
            order = np.lexsort((cand, -score, pid))
            pid, cand, b = pid[order], cand[order], b[order]
            first = np.ones(len(pid), dtype=bool)
            first[1:] = pid[1:] != pid[:-1]
            tri[pid[first]] = cand[first]
            bary[pid[first]] = b[first]
        if clamp > 0:
            missing = np.nonzero(tri < 0)[0]
            if len(missing):
                radius = max(1, math.ceil(clamp / self.cell))
                pid, cand = self._candidates(points[missing], radius=radius)
                if len(pid):
                    dist = _point_triangle_distance(points[missing][pid], self.mesh.vertices[self.mesh.triangles[cand]])
                    order = np.lexsort((cand, dist, pid))
                    pid, cand, dist = pid[order], cand[order], dist[order]
                    first = np.ones(len(pid), dtype=bool)
                    first[1:] = pid[1:] != pid[:-1]
                    ok = first & (dist <= clamp)
                    where = missing[pid[ok]]
                    tri[where] = cand[ok]
                    bary[where] = self.barycentric(cand[ok], points[where])
        return tri, bary


def _point_triangle_distance(points, tri_pts):
    """Euclidean distance from points to (filled) triangles, vectorized."""
    p0, p1, p2 = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    d1, d2 = p1 - p0, p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    rel = points - p0
    s = (rel[:, 0] * d2[:, 1] - rel[:, 1] * d2[:, 0]) / det
    t = (d1[:, 0] * rel[:, 1] - d1[:, 1] * rel[:, 0]) / det
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    dist = np.minimum(np.minimum(_segment_distance(points, p0, p1), _segment_distance(points, p1, p2)),
                      _segment_distance(points, p2, p0))
    return np.where(inside, 0.0, dist)


def _segment_distance(p, a, b):
    ab = b - a
    t = np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def locate_point(mesh, p, tol=1e-10):
    """Locate a single point.

    Returns ``(triangle_index, barycentric)`` or ``None`` when ``p`` lies
    outside every triangle.
    """
    tri, bary = mesh.locate(np.asarray(p, dtype=float).reshape(1, 2), tol=tol)
    if tri[0] < 0:
        return None
    return int(tri[0]), bary[0]


# -- text format ------------------------------------------------------------

def write_mesh(mesh, path):
    """Write the mesh text format.

    Line 1 holds ``nv nt nb``; then ``nv`` lines ``x y``, ``nt`` lines
    ``i j k marker``, ``nb`` lines ``i j marker`` and, when present, a final
    line ``circle cx cy r``.
    """
    lines = [f"{mesh.nvertices} {mesh.ntriangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k} {m}" for (i, j, k), m in zip(mesh.triangles.tolist(), mesh.triangle_markers.tolist())]
    lines += [f"{i} {j} {m}" for (i, j), m in zip(mesh.boundary_edges.tolist(), mesh.boundary_markers.tolist())]
    if mesh.circle is not None:
        lines.append("circle " + " ".join(repr(c) for c in mesh.circle))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Read the mesh text format written by :func:`write_mesh`.

    Clockwise triangles are reoriented with a warning. Malformed content
    raises :class:`MeshParseError` carrying the 1-based line number.
    """
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(n + 1, s.split()) for n, s in enumerate(raw) if s.strip() and not s.lstrip().startswith("#")]
    if not lines:
        raise MeshParseError("empty mesh file", 1)
    lineno, head = lines[0]
    try:
        nv, nt, nb = (int(x) for x in head)
    except ValueError:
        raise MeshParseError("expected 'nv nt nb' counts", lineno) from None
    need = 1 + nv + nt + nb
    if len(lines) < need:
        raise MeshParseError(f"expected {need} non-empty lines, found {len(lines)}", lines[-1][0])

    def parse(row, ncols, kind, conv):
        num, tok = row
        if len(tok) != ncols:
            raise MeshParseError(f"{kind} line needs {ncols} fields, got {len(tok)}", num)
        try:
            return [conv(t) for t in tok]
        except ValueError:
            raise MeshParseError(f"bad {kind} entry {' '.join(tok)!r}", num) from None

    body = lines[1:]
    vertices = np.array([parse(r, 2, "vertex", float) for r in body[:nv]], dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(vertices)):
        raise MeshParseError("non-finite vertex coordinate", body[0][0] if body else lineno)
    trows = body[nv:nv + nt]
    tdata = np.array([parse(r, 4, "triangle", int) for r in trows], dtype=np.int64).reshape(-1, 4)
    brows = body[nv + nt:nv + nt + nb]
    bdata = np.array([parse(r, 3, "boundary edge", int) for r in brows], dtype=np.int64).reshape(-1, 3)
    for rows, data, width in ((trows, tdata, 3), (brows, bdata, 2)):
        bad = np.nonzero(((data[:, :width] < 0) | (data[:, :width] >= nv)).any(axis=1))[0]
        if len(bad):
            raise MeshParseError(f"vertex index out of range (nv={nv})", rows[bad[0]][0])
    circle = None
    for num, tok in body[nv + nt + nb:]:
        if tok[0] == "circle" and len(tok) == 4:
            try:
                circle = tuple(float(t) for t in tok[1:])
            except ValueError:
                raise MeshParseError("bad circle line", num) from None
        else:
            raise MeshParseError("unexpected trailing content", num)

    triangles, flipped = _orient_ccw(vertices, tdata[:, :3])
    if flipped:
        warnings.warn(f"{path}: reoriented {flipped} clockwise triangle(s)", stacklevel=2)
    if np.any(np.abs(Mesh(vertices, triangles, np.zeros((0, 2)), []).signed_areas()) == 0):
        raise MeshParseError("degenerate (zero-area) triangle", trows[0][0] if trows else lineno)
    return Mesh(vertices, triangles, bdata[:, :2], bdata[:, 2], circle=circle,
                triangle_markers=tdata[:, 3])
