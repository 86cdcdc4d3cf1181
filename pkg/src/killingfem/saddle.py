"""Kernel-bordered saddle-point system and its direct solution.

Block structure (m kernel fields w_j, N = Mv W)::

    [ A   B^T  N ] [u]       [0]
    [ B   0    0 ] [lam]  =  [g]
    [ N^T 0    0 ] [alpha]   [c]

with ``g_i = (mu_i, z)_1`` and ``c_j = (z zhat, w_j)_1``. The last block row
fixes the kernel component of ``u`` to that of the data, which removes the
null space ``(w_j, 0)`` of the unbordered matrix.
"""

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (assemble_b, assemble_h1_scalar, assemble_rhs,
                       assemble_strain, default_order)
from .errors import DegeneracyError, SolverError
from .fespace import build_space
from .fields import check_nondegeneracy
from .kernel import DEFAULT_TAU, discrete_kernel, factor_spd, nd_permutation, rigid_motion_basis

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9
REFINEMENT_STEPS = 2
# 1-norm condition estimates above this mark a numerically singular matrix;
# bordered systems stay below 1e10 at desk scale, a missing border gives 1e17
COND_TOL = 1e14


@dataclass
class SaddleSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    N: np.ndarray
    g: np.ndarray
    c: np.ndarray

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_lambda(self):
        return self.B.shape[0]

    @property
    def m(self):
        return self.N.shape[1]

    def matrix(self):
        """The assembled symmetric block matrix (CSC)."""
        N = sp.csr_matrix(self.N) if self.m else None
        blocks = [[self.A, self.B.T, N],
                  [self.B, None, None],
                  [N.T if self.m else None, None, None]]
        if not self.m:
            blocks = [row[:2] for row in blocks[:2]]
        mat = sp.bmat(blocks, format="csc")
        mat.eliminate_zeros()
        return mat

    def rhs(self):
        return np.concatenate([np.zeros(self.n_u), self.g, self.c])

    @property
    def scale(self):
        return float(np.linalg.norm(self.g) + np.linalg.norm(self.c) + 1.0)

    def split(self, x):
        nu, nl = self.n_u, self.n_lambda
        return x[:nu], x[nu:nu + nl], x[nu + nl:]

    def residuals(self, u, lam, alpha):
        """Norms of the three block residuals."""
        r1 = self.A @ u + self.B.T @ lam + (self.N @ alpha if self.m else 0.0)
        r2 = self.B @ u - self.g
        r3 = self.N.T @ u - self.c if self.m else np.zeros(0)
        return {
            "momentum": float(np.linalg.norm(r1)),
            "constraint": float(np.linalg.norm(r2)),
            "kernel": float(np.linalg.norm(r3)),
        }


def build_system(A, B, Mv, kb, g, c):
    """Assemble the bordered system for kernel basis ``kb``.

    Raises
    ------
    ValueError
        On inconsistent dimensions.
    """
    n = A.shape[0]
    if A.shape != (n, n) or Mv.shape != (n, n):
        raise ValueError(f"A {A.shape} and Mv {Mv.shape} must be square of size {n}")
    if B.shape[1] != n:
        raise ValueError(f"B has {B.shape[1]} columns, expected {n}")
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float).reshape(-1)
    if g.shape != (B.shape[0],):
        raise ValueError(f"g has shape {g.shape}, expected ({B.shape[0]},)")
    W = np.asarray(kb.vectors)
    if W.shape[0] != n or c.shape != (W.shape[1],):
        raise ValueError("kernel basis and border data are inconsistent")
    N = np.asarray(Mv @ W) if W.shape[1] else np.zeros((n, 0))
    return SaddleSystem(A=sp.csr_matrix(A), B=sp.csr_matrix(B), N=N, g=g, c=c)


@dataclass
class Solution:
    """Coefficients of (u_h, lambda_h) and the border multipliers.

    ``operators`` holds the assembled matrices (A, B, M1, Mv) when the
    solution came from :func:`solve_problem`.
    """

    u: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    residuals: dict
    scale: float
    vspace: object = None
    sspace: object = None
    kernel: object = None
    operators: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def summary(self):
        out = {
            "ndof_u": int(self.u.size),
            "ndof_lambda": int(self.lam.size),
            "alpha": [float(a) for a in self.alpha],
            "residuals": dict(self.residuals),
            "scale": self.scale,
        }
        if self.kernel is not None:
            out["kernel"] = self.kernel.to_dict()
        out.update(self.info)
        return out


def nested_dissection_order(system):
    """Fill-reducing symmetric permutation of the bordered matrix.

    Nested dissection (METIS) on the scalar node graph, with the unknowns
    ``u_x, u_y, lam`` of each node kept adjacent and the border last. Needs
    equal-order velocity and multiplier spaces; returns None otherwise.
    """
    ns = system.n_lambda
    if system.n_u != 2 * ns:
        return None
    perm = nd_permutation(abs(system.B[:, :ns]) + abs(system.B[:, ns:]) + abs(system.A[:ns, :ns]))
    nodes = np.column_stack([perm, perm + ns, perm + 2 * ns]).ravel()
    return np.concatenate([nodes, np.arange(3 * ns, 3 * ns + system.m)])


def _factor(system, ordering, perm):
    """LU factors of the system matrix.

    Returns ``(apply, matvec, norm1)``: the solve (with a ``trans`` option),
    the product with the matrix and its 1-norm. Only one copy of the matrix
    is kept next to the factors, which dominate peak memory.
    """
    mat = system.matrix()
    norm1 = float(spla.norm(mat, 1))
    if ordering == "nd" and perm is not None:
        mat = mat[perm][:, perm].tocsc()
        lu = spla.splu(mat, permc_spec="NATURAL", diag_pivot_thresh=0.01,
                       options=dict(SymmetricMode=True))
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))

        def apply(b, trans="N"):
            return lu.solve(b[perm], trans=trans)[inv]

        def matvec(x):
            return (mat @ x[perm])[inv]
    else:
        lu = spla.splu(mat, permc_spec="COLAMD")
        apply = lu.solve

        def matvec(x):
            return mat @ x
    return apply, matvec, norm1


def condition_estimate(n, apply, norm1):
    """Estimate of ``|M|_1 |M^-1|_1`` from the LU solve (Higham's estimator)."""
    op = spla.LinearOperator((n, n), matvec=apply, rmatvec=lambda b: apply(b, trans="T"), dtype=float)
    return norm1 * float(spla.onenormest(op))


def _solve_with(matvec, rhs, apply):
    x = apply(rhs)
    for _ in range(REFINEMENT_STEPS):
        r = rhs - matvec(x)
        if np.linalg.norm(r) <= 1e-14 * (1.0 + np.linalg.norm(rhs)):
            break
        x = x + apply(r)
    return x


def solve(system, ordering="nd"):
    """Direct sparse LU solve of the bordered system with iterative refinement.

    ``ordering="nd"`` factorizes after a nested-dissection permutation with
    near-diagonal pivoting; if that fails or leaves large residuals the
    solve is repeated with COLAMD column ordering and partial pivoting.

    Raises
    ------
    SolverError
        If the factorization is singular (condition estimate above
        ``COND_TOL``) or the residuals stay above
        ``1e-9 * (1 + |rhs|)``.
    """
    if ordering not in ("nd", "colamd"):
        raise ValueError(f"unknown ordering {ordering!r}")
    rhs = system.rhs()
    bound = RESIDUAL_TOL * (1.0 + float(np.linalg.norm(rhs)))
    attempts = ["nd", "colamd"] if ordering == "nd" else ["colamd"]
    last = None
    for attempt in attempts:
        try:
            perm = nested_dissection_order(system) if attempt == "nd" else None
            apply, matvec, norm1 = _factor(system, attempt, perm)
        except RuntimeError as exc:
            last = f"saddle matrix is singular ({exc})"
            continue
        cond = condition_estimate(len(rhs), apply, norm1)
        if not cond < COND_TOL:
            last = f"saddle matrix is numerically singular (condition estimate {cond:.2e})"
            logger.info("%s ordering: %s", attempt, last)
            continue
        x = _solve_with(matvec, rhs, apply)
        if not np.all(np.isfinite(x)):
            last = "non-finite solution"
            continue
        u, lam, alpha = system.split(x)
        res = system.residuals(u, lam, alpha)
        if max(res.values()) <= bound:
            return Solution(u=u.copy(), lam=lam.copy(), alpha=alpha.copy(), residuals=res,
                            scale=system.scale, info={"ordering": attempt, "cond_estimate": cond})
        last = f"residuals {res} exceed {bound:.3e}"
        logger.info("%s ordering: %s", attempt, last)
    raise SolverError(
        f"{last}; the detected kernel dimension is {system.m}, consider adjusting "
        f"the detection threshold tau"
    )


def energy_diagnostics(solution, A, M1):
    """Strain energy, multiplier H1 norm and their ratio.

    Returns
    -------
    energy : float
        ``a(u_h, u_h)``.
    lambda_h1 : float
    ratio : float
        ``lambda_h1 / sqrt(energy)``; nan when the energy vanishes.
    """
    energy = float(solution.u @ (A @ solution.u))
    lam_h1 = float(np.sqrt(max(solution.lam @ (M1 @ solution.lam), 0.0)))
    ratio = lam_h1 / np.sqrt(energy) if energy > 0 else float("nan")
    return energy, lam_h1, float(ratio)


class SolverSession:
    """Time-independent parts of a solve on one mesh.

    The strain matrix, H1 Gram matrices and the rigid-motion basis do not
    depend on the data and are built once; :meth:`solve` assembles only the
    constraint, the right-hand sides and the kernel for a given field and t.
    """

    def __init__(self, mesh, k, boost=0, tau=DEFAULT_TAU, ordering="nd"):
        self.mesh = mesh
        self.k = k
        self.boost = boost
        self.tau = tau
        self.ordering = ordering
        self.order = default_order(k, boost)
        self.sspace = build_space(mesh, k)
        self.vspace = self.sspace.vector()
        self.A = assemble_strain(self.vspace, self.order)
        self.M1 = assemble_h1_scalar(self.sspace, self.order)
        self.Mv = sp.block_diag([self.M1, self.M1], format="csr")
        self.m1_solve = factor_spd(self.M1)
        self.rigid = rigid_motion_basis(self.vspace)

    def solve(self, field, t=0.0):
        start = time.perf_counter()
        B = assemble_b(self.sspace, self.vspace, field, t, self.order)
        kb = discrete_kernel(B, self.M1, self.Mv, self.rigid, tau=self.tau, m1_solve=self.m1_solve)
        g, c = assemble_rhs(self.sspace, self.vspace, field, t, self.order, kb.vectors)
        system = build_system(self.A, B, self.Mv, kb, g, c)
        sol = solve(system, self.ordering)
        sol.vspace, sol.sspace, sol.kernel = self.vspace, self.sspace, kb
        sol.operators = {"A": self.A, "B": B, "M1": self.M1, "Mv": self.Mv}
        energy, lam_h1, ratio = energy_diagnostics(sol, self.A, self.M1)
        sol.info.update({
            "k": self.k,
            "boost": self.boost,
            "quad_order": self.order,
            "t": t,
            "h": self.mesh.h,
            "level": self.mesh.level,
            "energy": energy,
            "lambda_h1": lam_h1,
            "ratio": ratio,
            "seconds": time.perf_counter() - start,
        })
        logger.info("solved k=%d level=%d t=%g ndof=%d kernel=%d in %.2fs", self.k, self.mesh.level, t,
                    self.vspace.ndofs + self.sspace.ndofs, kb.dim, sol.info["seconds"])
        return sol


def guard_degeneracy(problem, mesh, t, order, policy=None):
    """Apply the degeneracy policy of a level-set problem on ``mesh``.

    Returns the minimum of ``|grad phi|`` (None without a level set).
    """
    ls = problem.level_set
    if ls is None:
        return None
    policy = policy or problem.params.get("policy", "fail")
    min_norm, ok, point = check_nondegeneracy(ls, mesh, t, order)
    if not ok:
        err = DegeneracyError(point, min_norm, ls.c_min)
        if policy == "fail":
            raise err
        warnings.warn(str(err), RuntimeWarning, stacklevel=2)
    return min_norm


def solve_problem(problem, mesh, k, boost=0, tau=DEFAULT_TAU, t: Optional[float] = None, field=None,
                  ordering="nd"):
    """Assemble, detect the kernel and solve on ``mesh``.

    ``field`` overrides ``problem.field``; ``t`` defaults to ``problem.t``.
    Level-set problems are checked for degeneracy first.
    """
    t = problem.t if t is None else t
    fld = problem.field if field is None else field
    min_norm = guard_degeneracy(problem, mesh, t, default_order(k, boost))
    sol = SolverSession(mesh, k, boost, tau, ordering).solve(fld, t)
    if min_norm is not None:
        sol.info["min_grad_phi"] = min_norm
    return sol
