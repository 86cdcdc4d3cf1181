"""Given velocity data and level-set derived fields.

Every evaluator takes an array of points of shape (n, 2) and a time ``t``.
Jacobians are returned as (n, 2, 2) arrays with ``J[:, i, j] = d f_i / d x_j``.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegeneracyError
from .quadrature import triangle_rule

logger = logging.getLogger(__name__)

POLICIES = ("fail", "warn")


@dataclass(frozen=True)
class FieldSpec:
    """Given field z = z * zhat with unit direction zhat.

    Attributes
    ----------
    zhat, grad_zhat, zscalar, grad_zscalar : callable
        ``(points, t) -> array`` evaluators of the unit direction (n, 2), its
        Jacobian (n, 2, 2), the scalar length z (n,) and its gradient (n, 2).
    """

    zhat: Callable
    grad_zhat: Callable
    zscalar: Callable
    grad_zscalar: Callable
    name: str = ""

    def zvec(self, x, t=0.0):
        return self.zscalar(x, t)[:, None] * self.zhat(x, t)

    def grad_zvec(self, x, t=0.0):
        """Jacobian of z * zhat: ``zhat (grad z)^T + z grad zhat``."""
        zh = self.zhat(x, t)
        return (zh[:, :, None] * self.grad_zscalar(x, t)[:, None, :]
                + self.zscalar(x, t)[:, None, None] * self.grad_zhat(x, t))

    def evaluate(self, x, t=0.0):
        """All four data arrays at once: (zhat, grad_zhat, z, grad_z)."""
        return self.zhat(x, t), self.grad_zhat(x, t), self.zscalar(x, t), self.grad_zscalar(x, t)


@dataclass(frozen=True)
class LevelSetSpec:
    """Level set function with hand-coded derivatives.

    Evaluators: ``phi`` (n,), ``phi_t`` (n,), ``grad_phi`` (n, 2),
    ``grad_phi_t`` (n, 2), ``hess_phi`` (n, 2, 2).
    """

    phi: Callable
    phi_t: Callable
    grad_phi: Callable
    grad_phi_t: Callable
    hess_phi: Callable
    c_min: float = 0.1
    name: str = ""


class _LevelSetField:
    """Evaluators of the normal data of a level set, with a degeneracy guard."""

    def __init__(self, ls, policy):
        if policy not in POLICIES:
            raise ValueError(f"degeneracy policy must be one of {POLICIES}")
        self.ls = ls
        self.policy = policy

    def _grad(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = self.ls.grad_phi(x, t)
        norm = np.linalg.norm(g, axis=1)
        low = norm < self.ls.c_min
        if np.any(low):
            i = int(np.argmin(norm))
            if self.policy == "fail":
                raise DegeneracyError(x[i], norm[i], self.ls.c_min)
            warnings.warn(str(DegeneracyError(x[i], norm[i], self.ls.c_min)), RuntimeWarning, stacklevel=3)
        return x, g, norm

    def zhat(self, x, t=0.0):
        x, g, norm = self._grad(x, t)
        return g / norm[:, None]

    def grad_zhat(self, x, t=0.0):
        x, g, norm = self._grad(x, t)
        n = g / norm[:, None]
        proj = np.eye(2)[None] - n[:, :, None] * n[:, None, :]
        return proj @ self.ls.hess_phi(x, t) / norm[:, None, None]

    def zscalar(self, x, t=0.0):
        x, g, norm = self._grad(x, t)
        return -self.ls.phi_t(x, t) / norm

    def grad_zscalar(self, x, t=0.0):
        x, g, norm = self._grad(x, t)
        n = g / norm[:, None]
        pt = self.ls.phi_t(x, t)
        hn = np.einsum("nij,nj->ni", self.ls.hess_phi(x, t), n)
        return -(self.ls.grad_phi_t(x, t) * norm[:, None] - pt[:, None] * hn) / norm[:, None] ** 2


def from_level_set(ls, policy="fail"):
    """Normal velocity data of a moving level set.

    zhat = grad phi / |grad phi| and z = -phi_t / |grad phi|. Evaluation at a
    point with ``|grad phi| < ls.c_min`` raises :class:`DegeneracyError`
    (``policy="fail"``) or emits a ``RuntimeWarning`` (``policy="warn"``).
    """
    f = _LevelSetField(ls, policy)
    return FieldSpec(zhat=f.zhat, grad_zhat=f.grad_zhat, zscalar=f.zscalar,
                     grad_zscalar=f.grad_zscalar, name=ls.name)


def normal_velocity(ls, x, t):
    """Purely normal transport velocity ``-phi_t grad phi / |grad phi|^2``."""
    g = ls.grad_phi(x, t)
    return -(ls.phi_t(x, t) / np.einsum("ni,ni->n", g, g))[:, None] * g


def check_nondegeneracy(ls, mesh, t=0.0, order=2):
    """Minimum of ``|grad phi|`` over the quadrature points and vertices of ``mesh``.

    Returns
    -------
    min_norm : float
    ok : bool
        ``min_norm >= ls.c_min``.
    where : tuple
        Point attaining the minimum.
    """
    rule = triangle_rule(order)
    pts = mesh.map_to_physical(np.arange(mesh.ntriangles), rule.points).reshape(-1, 2)
    pts = np.vstack([pts, mesh.vertices])
    norm = np.linalg.norm(ls.grad_phi(pts, t), axis=1)
    i = int(np.argmin(norm))
    ok = bool(norm[i] >= ls.c_min)
    if not ok:
        logger.info("level set degenerate: |grad phi| = %.3e at %s", norm[i], pts[i])
    return float(norm[i]), ok, tuple(float(v) for v in pts[i])


def constant_field(direction, zscalar=None, grad_zscalar=None, name="constant"):
    """Field with spatially constant unit direction.

    ``zscalar``/``grad_zscalar`` default to z = 1.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    def zhat(x, t=0.0):
        return np.broadcast_to(d, (len(x), 2)).copy()

    def grad_zhat(x, t=0.0):
        return np.zeros((len(x), 2, 2))

    if zscalar is None:
        def zscalar(x, t=0.0):
            return np.ones(len(x))

        def grad_zscalar(x, t=0.0):
            return np.zeros((len(x), 2))

    return FieldSpec(zhat=zhat, grad_zhat=grad_zhat, zscalar=zscalar,
                     grad_zscalar=grad_zscalar, name=name)
