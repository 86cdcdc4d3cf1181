"""Benchmark problems with closed-form data and, where known, exact solutions."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .fields import FieldSpec, LevelSetSpec, constant_field, from_level_set
from .mesh import DomainSpec

# biconcave target shape constants
BICONCAVE_C = 24.0 / 25.0
BICONCAVE_D = 19.0 / 20.0
ELLIPSE_A = 1.3
DEFAULT_C_MIN = 0.1


@dataclass(frozen=True)
class ProblemSpec:
    """A named benchmark.

    ``exact_u(x, t)`` returns (n, 2) velocities and ``exact_grad_u(x, t)`` their
    Jacobians (n, 2, 2); ``exact_lambda``/``exact_grad_lambda`` likewise for the
    multiplier when it is known.
    """

    name: str
    domain: DomainSpec
    field: FieldSpec
    expected_kernel_dim: int
    t: float = 0.0
    level_set: Optional[LevelSetSpec] = None
    exact_u: Optional[Callable] = None
    exact_grad_u: Optional[Callable] = None
    exact_lambda: Optional[Callable] = None
    exact_grad_lambda: Optional[Callable] = None
    time_interval: Optional[tuple] = None
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def has_exact(self):
        return self.exact_u is not None

    def metadata(self):
        return {
            "name": self.name,
            "domain": self.domain.to_dict(),
            "t": self.t,
            "expected_kernel_dim": self.expected_kernel_dim,
            "has_exact_u": self.exact_u is not None,
            "has_exact_lambda": self.exact_lambda is not None,
            "params": dict(self.params),
        }


_PROFILES = {
    "cos": (np.cos, lambda s: -np.sin(s), lambda s: -np.cos(s)),
    "linear": (lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s)),
}


def synthetic_problem(direction=(1.0, 2.0), profile="cos", domain=None):
    """Constant-direction field with a known strain-energy minimizer.

    With unit ``zhat``, ``zperp = (-zhat_2, zhat_1)``, s = zhat . x and
    p = zperp . x, the data are z = p F'(s) and the minimizer is
    ``u = z zhat - F(s) zperp``. The constraint kernel is span(zperp).
    """
    if profile not in _PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(_PROFILES)}")
    domain = domain or DomainSpec.square(4.0 / 3.0)
    F, dF, ddF = _PROFILES[profile]
    zh = np.asarray(direction, dtype=float)
    zh = zh / np.linalg.norm(zh)
    zp = np.array([-zh[1], zh[0]])

    def s_p(x):
        return x @ zh, x @ zp

    def zscalar(x, t=0.0):
        s, p = s_p(x)
        return p * dF(s)

    def grad_zscalar(x, t=0.0):
        s, p = s_p(x)
        return dF(s)[:, None] * zp + (p * ddF(s))[:, None] * zh

    def exact_u(x, t=0.0):
        s, _ = s_p(x)
        return zscalar(x)[:, None] * zh - F(s)[:, None] * zp

    def exact_grad_u(x, t=0.0):
        s, _ = s_p(x)
        gz = grad_zscalar(x)
        return zh[None, :, None] * gz[:, None, :] - dF(s)[:, None, None] * np.outer(zp, zh)[None]

    def grad_v2(x, t=0.0):
        s, _ = s_p(x)
        return -dF(s)[:, None] * zh

    fld = constant_field(zh, zscalar, grad_zscalar, name=f"synthetic_{profile}")
    a = domain.a
    gauge = None
    if domain.variant == "square" and profile == "cos":
        c, s = zh
        gauge = _cos_square_integral(c, s, a)
    return ProblemSpec(
        name="synthetic" if profile == "cos" else f"synthetic_{profile}",
        domain=domain,
        field=fld,
        expected_kernel_dim=1,
        exact_u=exact_u,
        exact_grad_u=exact_grad_u,
        params={"direction": [float(v) for v in zh], "profile": profile},
        extras={
            "zhat": zh,
            "zperp": zp,
            "v2": lambda x, t=0.0: -F(x @ zh),
            "grad_v2": grad_v2,
            "z1": zscalar,
            "grad_z1": grad_zscalar,
            "gauge_integral": gauge,
        },
    )


def _cos_square_integral(c, s, a):
    """Integral of cos(c x + s y) over (-a, a)^2."""
    def half(w):
        return 2 * a if abs(w) < 1e-14 else 2 * math.sin(w * a) / w
    return half(c) * half(s)


def _deforming_level_set(c_min=DEFAULT_C_MIN):
    c4 = BICONCAVE_C**4
    d2 = BICONCAVE_D**2

    def parts(x):
        X, Y = x[:, 0], x[:, 1]
        q = d2 + X**2 + Y**2
        P = q**3 - 8 * d2 * X**2 - c4
        Q = ELLIPSE_A * X**2 + Y**2 - 1.0
        gP = np.column_stack([6 * X * q**2 - 16 * d2 * X, 6 * Y * q**2])
        gQ = np.column_stack([2 * ELLIPSE_A * X, 2 * Y])
        hP = np.empty((len(X), 2, 2))
        hP[:, 0, 0] = 6 * q**2 + 24 * X**2 * q - 16 * d2
        hP[:, 0, 1] = hP[:, 1, 0] = 24 * X * Y * q
        hP[:, 1, 1] = 6 * q**2 + 24 * Y**2 * q
        hQ = np.zeros((len(X), 2, 2))
        hQ[:, 0, 0] = 2 * ELLIPSE_A
        hQ[:, 1, 1] = 2.0
        return P, Q, gP, gQ, hP, hQ

    def phi(x, t):
        P, Q, *_ = parts(x)
        return t * P + (1 - t) * Q

    def phi_t(x, t):
        P, Q, *_ = parts(x)
        return P - Q

    def grad_phi(x, t):
        _, _, gP, gQ, _, _ = parts(x)
        return t * gP + (1 - t) * gQ

    def grad_phi_t(x, t):
        _, _, gP, gQ, _, _ = parts(x)
        return gP - gQ

    def hess_phi(x, t):
        *_, hP, hQ = parts(x)
        return t * hP + (1 - t) * hQ

    return LevelSetSpec(phi, phi_t, grad_phi, grad_phi_t, hess_phi, c_min=c_min, name="deforming_ellipse")


DEFORMING_DOMAINS = {
    "regular": lambda: DomainSpec.square_minus_disc(4.0 / 3.0, 0.2),
    "corner": lambda: DomainSpec.square_minus_square(4.0 / 3.0, 0.4),
    "critical": lambda: DomainSpec.square(4.0 / 3.0),
    # the slot covers the critical points (x, 0), |x| <= 0.81, of phi(., t) for all t in [0, 1]
    "slot": lambda: DomainSpec.square_minus_rectangle(4.0 / 3.0, 0.9, 0.12),
}


def deforming_ellipse_problem(domain="regular", t=0.0, policy="fail", c_min=DEFAULT_C_MIN):
    """Ellipse 1.3 x^2 + y^2 = 1 blending linearly in time into a biconcave shape.

    No exact solution is known; studies compare against a fine-mesh reference.
    """
    if domain not in DEFORMING_DOMAINS:
        raise ConfigError(f"unknown domain {domain!r}; expected one of {sorted(DEFORMING_DOMAINS)}")
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"t must lie in [0, 1], got {t}")
    ls = _deforming_level_set(c_min)
    return ProblemSpec(
        name="deforming_ellipse",
        domain=DEFORMING_DOMAINS[domain](),
        field=from_level_set(ls, policy),
        expected_kernel_dim=0,
        t=t,
        level_set=ls,
        time_interval=(0.0, 1.0),
        params={"domain": domain, "t": t, "policy": policy, "c_min": c_min},
    )


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _rotating_level_set(omega, c_min=DEFAULT_C_MIN):
    H0 = np.diag([2 * ELLIPSE_A, 2.0])

    def frame(x, t):
        M = _rotation(omega * t)
        dM = omega * np.array([[-np.sin(omega * t), -np.cos(omega * t)],
                               [np.cos(omega * t), -np.sin(omega * t)]])
        return M, dM, x @ M.T

    def phi(x, t):
        _, _, xh = frame(x, t)
        return ELLIPSE_A * xh[:, 0] ** 2 + xh[:, 1] ** 2 - 1.0

    def grad_phi(x, t):
        M, _, xh = frame(x, t)
        return (xh @ H0) @ M  # M^T grad Q(Mx)

    def phi_t(x, t):
        M, dM, xh = frame(x, t)
        return np.einsum("ni,ni->n", xh @ H0, x @ dM.T)

    def grad_phi_t(x, t):
        M, dM, xh = frame(x, t)
        # M^T H0 (dM x) + dM^T H0 (M x)
        return (x @ dM.T @ H0) @ M + (xh @ H0) @ dM

    def hess_phi(x, t):
        M, _, _ = frame(x, t)
        return np.broadcast_to(M.T @ H0 @ M, (len(x), 2, 2)).copy()

    return LevelSetSpec(phi, phi_t, grad_phi, grad_phi_t, hess_phi, c_min=c_min, name="rotating_ellipse")


def rotating_ellipse_problem(t0=0.0, omega=0.1, policy="fail", c_min=DEFAULT_C_MIN):
    """Ellipse rotating rigidly with angular speed ``omega``.

    The strain-energy minimizer is the rotation ``u = omega (y, -x)`` with
    zero multiplier, for every t.
    """
    ls = _rotating_level_set(omega, c_min)
    J = omega * np.array([[0.0, 1.0], [-1.0, 0.0]])

    def exact_u(x, t=0.0):
        return x @ J.T

    def exact_grad_u(x, t=0.0):
        return np.broadcast_to(J, (len(x), 2, 2)).copy()

    def exact_lambda(x, t=0.0):
        return np.zeros(len(x))

    def exact_grad_lambda(x, t=0.0):
        return np.zeros((len(x), 2))

    return ProblemSpec(
        name="rotating_ellipse",
        domain=DomainSpec.square_minus_disc(4.0 / 3.0, 0.2),
        field=from_level_set(ls, policy),
        expected_kernel_dim=0,
        t=t0,
        level_set=ls,
        exact_u=exact_u,
        exact_grad_u=exact_grad_u,
        exact_lambda=exact_lambda,
        exact_grad_lambda=exact_grad_lambda,
        time_interval=(0.0, 1.0),
        params={"t0": t0, "omega": omega, "policy": policy, "c_min": c_min},
    )


PROBLEMS = {
    "synthetic": lambda **kw: synthetic_problem(**kw),
    "synthetic_linear": lambda **kw: synthetic_problem(**{"direction": (1.0, 0.0), "profile": "linear", **kw}),
    "deforming_ellipse": lambda **kw: deforming_ellipse_problem(**kw),
    "rotating_ellipse": lambda **kw: rotating_ellipse_problem(**kw),
}

# parameters settable by name (from config files); level-set problems take a degeneracy policy
PROBLEM_PARAMS = {
    "synthetic": ("direction", "profile"),
    "synthetic_linear": ("direction", "profile"),
    "deforming_ellipse": ("domain", "t", "policy", "c_min"),
    "rotating_ellipse": ("t0", "omega", "policy", "c_min"),
}


def get_problem(name, **params):
    """Look up a problem factory by name and call it with ``params``."""
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)}")
    unknown = sorted(set(params) - set(PROBLEM_PARAMS[name]))
    if unknown:
        raise ConfigError(f"bad parameters for problem {name!r}: {unknown}; accepted: {list(PROBLEM_PARAMS[name])}")
    try:
        return PROBLEMS[name](**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for problem {name!r}: {exc}") from None
