"""Rigid motions, the discrete constraint kernel and H1 projections onto it.

A rigid motion w lies in the discrete kernel when ``b(mu_h, w) = 0`` for all
discrete multipliers, i.e. when ``B w = 0``. Detection measures ``B w`` in
the discrete H^{-1} dual norm ``(Bw)^T M1^{-1} (Bw)`` relative to the H1 norm
of ``w``, over the three-dimensional space of rigid motions.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pymetis
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import integrate
from .fespace import interpolate

DEFAULT_TAU = 1e-8
RANK_TOL = 1e-8


@dataclass(frozen=True)
class RigidBasis:
    """L2-orthonormal basis of the rigid motions, interpolated in a vector space.

    ``vectors[:, 0]`` and ``vectors[:, 1]`` are the normalized translations,
    ``vectors[:, 2]`` is ``d3 * (d1 - y, d2 + x)``.
    """

    vectors: np.ndarray
    d1: float
    d2: float
    d3: float
    area: float


@dataclass(frozen=True)
class KernelBasis:
    """H1-orthonormal basis of the detected discrete kernel.

    ``singular_values`` are the square roots of the generalized eigenvalues of
    the detection problem, in increasing order; ``dim`` of them fall below the
    threshold.
    """

    vectors: np.ndarray
    singular_values: np.ndarray
    tau: float
    coefficients: np.ndarray = field(default=None)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def to_dict(self):
        return {
            "dim": int(self.dim),
            "tau": float(self.tau),
            "singular_values": [float(s) for s in self.singular_values],
        }


def rigid_motion_basis(vspace, order=2):
    """Interpolated L2-orthonormal rigid-motion basis on ``vspace``."""
    mesh = vspace.mesh
    area = integrate(mesh, lambda p: np.ones(len(p)), order)
    d1 = integrate(mesh, lambda p: p[:, 1], order) / area
    d2 = -integrate(mesh, lambda p: p[:, 0], order) / area
    d3 = 1.0 / math.sqrt(integrate(mesh, lambda p: (d1 - p[:, 1]) ** 2 + (d2 + p[:, 0]) ** 2, order))
    s = 1.0 / math.sqrt(area)
    v1 = interpolate(vspace, [s, 0.0])
    v2 = interpolate(vspace, [0.0, s])
    v3 = interpolate(vspace, lambda p: d3 * np.column_stack([d1 - p[:, 1], d2 + p[:, 0]]))
    vectors = np.column_stack([v1, v2, v3])
    vectors.setflags(write=False)
    return RigidBasis(vectors=vectors, d1=d1, d2=d2, d3=d3, area=area)


def _m_orthonormalize(V, M):
    if V.shape[1] == 0:
        return V
    gram = V.T @ (M @ V)
    L = np.linalg.cholesky(0.5 * (gram + gram.T))
    return la.solve_triangular(L, V.T, lower=True).T


def nd_permutation(graph):
    """METIS nested-dissection ordering of a symmetric sparsity pattern."""
    graph = sp.csr_matrix(abs(graph))
    graph = (graph + graph.T).tocsr()
    graph.setdiag(0)
    graph.eliminate_zeros()
    adjacency = pymetis.CSRAdjacency(adj_starts=graph.indptr.astype(np.int64),
                                     adjacent=graph.indices.astype(np.int64))
    perm, _ = pymetis.nested_dissection(adjacency=adjacency)
    return np.asarray(perm, dtype=np.int64)


def factor_spd(mat):
    """Solver for a sparse SPD matrix, LU without pivoting in nested-dissection order.

    Uses far less fill than the default column ordering on 2D meshes.
    """
    perm = nd_permutation(mat)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    pmat = sp.csc_matrix(mat)[perm][:, perm].tocsc()
    lu = spla.splu(pmat, permc_spec="NATURAL", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))

    def apply(b):
        return lu.solve(np.asarray(b, dtype=float)[perm])[inv]

    return apply


def discrete_kernel(B, M1, Mv, rigid, tau=DEFAULT_TAU, m1_solve=None):
    """Detect the rigid motions annihilated by the discrete constraint.

    Parameters
    ----------
    B : sparse matrix (n_lambda, n_v)
    M1, Mv : sparse matrices
        Scalar and vector H1 Gram matrices.
    rigid : RigidBasis
    tau : float
        Relative threshold on the dual-norm singular values.
    m1_solve : callable, optional
        Pre-factorized solver for ``M1``.

    Returns
    -------
    KernelBasis
    """
    W = np.asarray(rigid.vectors)
    if m1_solve is None:
        m1_solve = factor_spd(M1)
    C = B @ W
    X = np.column_stack([m1_solve(C[:, j]) for j in range(C.shape[1])])
    G = C.T @ X
    S = W.T @ (Mv @ W)
    _, P = la.eigh(0.5 * (G + G.T), 0.5 * (S + S.T))
    # recompute each Rayleigh quotient from B (W p) directly; the eigenvalue
    # solver alone only resolves small eigenvalues to eps * |G|
    sigma = np.empty(P.shape[1])
    for i in range(P.shape[1]):
        y = B @ (W @ P[:, i])
        sigma[i] = float(y @ m1_solve(y)) / float(P[:, i] @ S @ P[:, i])
    order = np.argsort(sigma)
    sigma, P = sigma[order], P[:, order]
    sv = np.sqrt(np.maximum(sigma, 0.0))
    cutoff = tau * max(1.0, sv.max())
    mask = sv <= cutoff
    vectors = _m_orthonormalize(W @ P[:, mask], Mv)
    vectors.setflags(write=False)
    return KernelBasis(vectors=vectors, singular_values=sv, tau=tau, coefficients=P[:, mask])


def empty_kernel(ndofs, tau=DEFAULT_TAU):
    return KernelBasis(vectors=np.zeros((ndofs, 0)), singular_values=np.zeros(0), tau=tau)


def project_kernel(coeffs, kb, Mv):
    """H1-orthogonal projection onto the kernel span and its complement."""
    coeffs = np.asarray(coeffs, dtype=float)
    if kb.dim == 0:
        return np.zeros_like(coeffs), coeffs.copy()
    c = kb.vectors.T @ (Mv @ coeffs)
    proj = kb.vectors @ c
    return proj, coeffs - proj


def rank_diagnostic(field, t, points, rel_tol=RANK_TOL):
    """Rank of the stacked rows ``(zhat_1, zhat_2, -y zhat_1 + x zhat_2)``.

    Returns
    -------
    singular_values : ndarray, shape (3,)
    bound : int
        ``3 - rank``, an upper bound on the kernel dimension.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 3:
        raise ValueError("rank diagnostic needs at least 3 sample points")
    zh = field.zhat(pts, t)
    rows = np.column_stack([zh[:, 0], zh[:, 1], -pts[:, 1] * zh[:, 0] + pts[:, 0] * zh[:, 1]])
    s = np.linalg.svd(rows, compute_uv=False)
    rank = int(np.sum(s > rel_tol * s[0])) if s[0] > 0 else 0
    return s, 3 - rank
