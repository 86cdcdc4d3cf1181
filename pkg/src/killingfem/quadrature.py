"""Symmetric quadrature rules on the reference triangle.

The reference triangle has vertices (0, 0), (1, 0), (0, 1) and area 1/2.
Rules are the fully symmetric Xiao-Gimbutas rules shipped with :mod:`modepy`,
mapped from modepy's bi-unit triangle.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORDER = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature rule on the reference triangle.

    Attributes
    ----------
    order : int
        Polynomial degree integrated exactly.
    points : ndarray, shape (nq, 2)
        Reference coordinates (xi, eta).
    weights : ndarray, shape (nq,)
        Weights summing to 1/2.
    """

    order: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def bary(self):
        """Barycentric coordinates of the points, shape (nq, 3)."""
        xi, eta = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - xi - eta, xi, eta])

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(order):
    """Return a rule exact for bivariate polynomials of degree ``order``.

    Orders below 1 are promoted to 1. Orders above :data:`MAX_ORDER` raise.
    """
    import modepy

    order = max(int(order), 1)
    if order > MAX_ORDER:
        raise ValueError(f"quadrature order {order} exceeds supported maximum {MAX_ORDER}")
    q = modepy.XiaoGimbutasSimplexQuadrature(order, 2)
    points = 0.5 * (np.asarray(q.nodes).T + 1.0)
    weights = 0.25 * np.asarray(q.weights)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(order=order, points=points, weights=weights)
