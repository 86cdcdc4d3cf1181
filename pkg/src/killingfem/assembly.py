"""Sparse assembly of the strain form, H1 products and the tangentiality constraint.

Forms (no boundary conditions, everything posed in full H1):

* strain   a(u, v)   = int E(u) : E(v),  E(v) = grad v + grad v^T
* H1       (p, q)_1  = int grad p . grad q + p q
* constraint b(l, v) = (l, v . zhat)_1

Element contributions are evaluated in vectorized chunks and summed into CSR
matrices in element order, so the result does not depend on chunk size.
"""

import numpy as np
import scipy.sparse as sp

from .quadrature import triangle_rule

CHUNK = 4096


def default_order(k, boost=0):
    """Quadrature order ``2k + boost``."""
    return 2 * k + boost


def _chunks(n, size=CHUNK):
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


def _weights(mesh, tri, rule):
    return np.abs(mesh.determinants[tri])[:, None] * rule.weights[None, :]


def _quad_points(mesh, tri, rule):
    return mesh.map_to_physical(tri, rule.points)


class _Triplets:
    """COO accumulator that sums duplicates chunk by chunk to bound memory."""

    def __init__(self, shape):
        self.shape = shape
        self.parts = []

    def add(self, rows, cols, vals):
        idx = np.int32 if max(self.shape) < 2**31 - 1 else np.int64
        chunk = sp.coo_matrix((vals, (rows.astype(idx), cols.astype(idx))), shape=self.shape)
        chunk.sum_duplicates()
        self.parts.append((chunk.row, chunk.col, chunk.data))

    def tocsr(self):
        if self.parts:
            rows, cols, vals = (np.concatenate(p) for p in zip(*self.parts))
        else:
            rows = cols = np.zeros(0, dtype=np.int32)
            vals = np.zeros(0)
        self.parts = []
        mat = sp.coo_matrix((vals, (rows, cols)), shape=self.shape).tocsr()
        mat.sum_duplicates()
        # drop entries that are exactly representable noise
        mat.data[np.abs(mat.data) < 1e-300] = 0.0
        mat.eliminate_zeros()
        return mat


def _vector_dofs(vspace, tri):
    """Global vector dofs of the local index ``c * nloc + a``, shape (T, 2 * nloc)."""
    d = vspace.cell_dofs[tri]
    return np.hstack([d, d + vspace.nscalar])


def assemble_strain(vspace, order=None):
    """Matrix of the strain form on a two-component space."""
    if vspace.ncomp != 2:
        raise ValueError("strain form needs a vector space")
    k = vspace.degree
    rule = triangle_rule(default_order(k) if order is None else order)
    mesh = vspace.mesh
    nloc = vspace.nloc
    acc = _Triplets((vspace.ndofs, vspace.ndofs))
    for tri in _chunks(mesh.ntriangles):
        _, dphi = vspace.tabulate(tri, rule.points)  # (T, nq, nloc, 2)
        w = _weights(mesh, tri, rule)
        # G[t, a, b, i, j] = int d_i N_a d_j N_b
        G = np.einsum("tq,tqai,tqbj->tabij", w, dphi, dphi)
        S = G[..., 0, 0] + G[..., 1, 1]
        K = np.empty((len(tri), 2, nloc, 2, nloc))
        for c in range(2):
            for d in range(2):
                K[:, c, :, d, :] = 2.0 * ((c == d) * S + G[:, :, :, d, c])
        dofs = _vector_dofs(vspace, tri)
        K = K.reshape(len(tri), 2 * nloc, 2 * nloc)
        acc.add(np.repeat(dofs, 2 * nloc, axis=1).ravel(), np.tile(dofs, (1, 2 * nloc)).ravel(), K.ravel())
    return acc.tocsr()


def _scalar_forms(sspace, order, stiffness=True, mass=True):
    rule = triangle_rule(default_order(sspace.degree) if order is None else order)
    mesh = sspace.mesh
    nloc = sspace.nloc
    acc = _Triplets((sspace.nscalar, sspace.nscalar))
    for tri in _chunks(mesh.ntriangles):
        phi, dphi = sspace.tabulate(tri, rule.points)
        w = _weights(mesh, tri, rule)
        K = np.zeros((len(tri), nloc, nloc))
        if stiffness:
            K += np.einsum("tq,tqai,tqbi->tab", w, dphi, dphi)
        if mass:
            K += np.einsum("tq,qa,qb->tab", w, phi, phi)
        dofs = sspace.cell_dofs[tri]
        acc.add(np.repeat(dofs, nloc, axis=1).ravel(), np.tile(dofs, (1, nloc)).ravel(), K.ravel())
    return acc.tocsr()


def assemble_h1_scalar(sspace, order=None):
    """Gram matrix of the H1 inner product on a scalar space."""
    return _scalar_forms(sspace, order)


def assemble_mass(sspace, order=None):
    """L2 Gram matrix on a scalar space."""
    return _scalar_forms(sspace, order, stiffness=False)


def assemble_h1_vec(vspace, order=None):
    """Gram matrix of the H1 inner product on a vector space (blocked numbering)."""
    m1 = _scalar_forms(vspace, order)
    return sp.block_diag([m1, m1], format="csr")


def assemble_b(sspace, vspace, field, t=0.0, order=None):
    """Constraint matrix ``B[i, j] = b(mu_i, phi_j)`` (scalar rows, vector columns).

    ``b(mu, phi) = int grad mu . (J_phi^T zhat + grad_zhat^T phi) + mu (phi . zhat)``.
    """
    if sspace.mesh is not vspace.mesh:
        raise ValueError("spaces live on different meshes")
    k = max(sspace.degree, vspace.degree)
    rule = triangle_rule(default_order(k) if order is None else order)
    mesh = sspace.mesh
    ns, nv = sspace.nloc, vspace.nloc
    acc = _Triplets((sspace.nscalar, vspace.ndofs))
    for tri in _chunks(mesh.ntriangles):
        mu, dmu = sspace.tabulate(tri, rule.points)
        phi, dphi = vspace.tabulate(tri, rule.points)
        w = _weights(mesh, tri, rule)
        x = _quad_points(mesh, tri, rule).reshape(-1, 2)
        zh = field.zhat(x, t).reshape(len(tri), -1, 2)
        gzh = field.grad_zhat(x, t).reshape(len(tri), -1, 2, 2)
        # local[t, i, c, a]
        loc = np.einsum("tq,tqid,tqad,tqc->tica", w, dmu, dphi, zh)
        loc += np.einsum("tq,qa,tqid,tqcd->tica", w, phi, dmu, gzh)
        loc += np.einsum("tq,qi,qa,tqc->tica", w, mu, phi, zh)
        rdofs = sspace.cell_dofs[tri]
        cdofs = _vector_dofs(vspace, tri)
        acc.add(np.repeat(rdofs, 2 * nv, axis=1).ravel(), np.tile(cdofs, (1, ns)).ravel(),
                loc.reshape(len(tri), ns, 2 * nv).ravel())
    return acc.tocsr()


def assemble_rhs(sspace, vspace, field, t=0.0, order=None, kernel_vectors=None):
    """Right-hand sides of the constrained problem.

    Returns
    -------
    g : ndarray, shape (nscalar,)
        ``g[i] = (mu_i, z)_1``.
    zh1 : ndarray, shape (m,)
        ``(z * zhat, w_j)_1`` for the columns ``w_j`` of ``kernel_vectors``
        (coefficient vectors in ``vspace``); empty when none are given.
    """
    k = max(sspace.degree, vspace.degree)
    rule = triangle_rule(default_order(k) if order is None else order)
    mesh = sspace.mesh
    W = np.zeros((vspace.ndofs, 0)) if kernel_vectors is None else np.asarray(kernel_vectors).reshape(vspace.ndofs, -1)
    g = np.zeros(sspace.nscalar)
    zh1 = np.zeros(W.shape[1])
    for tri in _chunks(mesh.ntriangles):
        mu, dmu = sspace.tabulate(tri, rule.points)
        w = _weights(mesh, tri, rule)
        x = _quad_points(mesh, tri, rule).reshape(-1, 2)
        T, nq = w.shape
        z = field.zscalar(x, t).reshape(T, nq)
        gz = field.grad_zscalar(x, t).reshape(T, nq, 2)
        loc = np.einsum("tq,tqid,tqd->ti", w, dmu, gz) + np.einsum("tq,qi,tq->ti", w, mu, z)
        np.add.at(g, sspace.cell_dofs[tri], loc)
        if W.shape[1]:
            zh = field.zhat(x, t).reshape(T, nq, 2)
            zvec = z[..., None] * zh
            gzvec = field.grad_zvec(x, t).reshape(T, nq, 2, 2)
            phi, dphi = vspace.tabulate(tri, rule.points)
            dofs = _vector_dofs(vspace, tri)
            for j in range(W.shape[1]):
                wl = W[dofs, j].reshape(T, 2, -1)  # (T, c, a)
                wv = np.einsum("tca,qa->tqc", wl, phi)
                wg = np.einsum("tca,tqad->tqcd", wl, dphi)
                zh1[j] += np.sum(w * (np.einsum("tqcd,tqcd->tq", gzvec, wg) + np.einsum("tqc,tqc->tq", zvec, wv)))
    return g, zh1


def integrate(mesh, f, order=2):
    """Integral over the mesh of ``f(points) -> (n,)``."""
    rule = triangle_rule(order)
    total = 0.0
    for tri in _chunks(mesh.ntriangles):
        x = _quad_points(mesh, tri, rule).reshape(-1, 2)
        total += float(np.sum(_weights(mesh, tri, rule) * np.asarray(f(x)).reshape(len(tri), -1)))
    return total


def export_coo(matrix, path):
    """Write a sparse matrix as ``row col value`` lines (0-based)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
