"""Explicit Euler particle tracking on an evolving level set.

Near-isometric mode advances ``xi_i = xi_{i-1} + dt * u_h(t_i)(xi_{i-1})``
with u_h the solution of the constrained problem at time ``t_i``. The
baseline uses the purely normal velocity ``-phi_t grad phi / |grad phi|^2``.
"""

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import ConfigError, DegeneracyError, SolverError
from .fields import normal_velocity
from .kernel import DEFAULT_TAU
from .mesh import build_hierarchy
from .saddle import SolverSession, guard_degeneracy

logger = logging.getLogger(__name__)

MODES = ("near_isometric", "normal_baseline")
PROJECTION_TOL = 1e-10
PROJECTION_MAXIT = 50


@dataclass
class TrackingConfig:
    """Parameters of one tracking run.

    ``seeds`` holds raw points (projected onto the zero level set at t=0
    during setup); when None, ``n_seeds`` points are generated on rays at
    equal angles.
    """

    N: int = 60
    t_end: float = 1.0
    mode: str = "near_isometric"
    level: int = 2
    k: int = 2
    boost: int = 0
    h0: float = 1.0
    tau: float = DEFAULT_TAU
    n_seeds: int = 16
    seeds: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.level < 0:
            raise ConfigError("level must be >= 0")
        if self.seeds is None and self.n_seeds < 2:
            raise ConfigError("need at least 2 seeds")

    @property
    def dt(self):
        return self.t_end / self.N


@dataclass
class Trajectory:
    seed_id: int
    times: np.ndarray
    positions: np.ndarray
    lost: bool = False
    exit_step: Optional[int] = None
    reason: str = ""


def ray_points(n, radius=1.0, phase=0.0):
    """``n`` points on a circle at equal angles."""
    theta = phase + 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(theta), np.sin(theta)])


def project_seeds(ls, points, t=0.0, domain=None, tol=PROJECTION_TOL, maxit=PROJECTION_MAXIT):
    """Newton projection ``x <- x - phi grad phi / |grad phi|^2`` onto phi(., t) = 0.

    Returns
    -------
    seeds : ndarray, shape (n_ok, 2)
    accepted : ndarray of int
        Indices of the raw points that converged.
    rejected : list of (index, reason)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    seeds, accepted, rejected = [], [], []
    for i, p in enumerate(pts):
        x = p[None, :].copy()
        reason = None
        for _ in range(maxit + 1):
            f = float(ls.phi(x, t)[0])
            if abs(f) <= tol:
                break
            g = ls.grad_phi(x, t)[0]
            gn = float(g @ g)
            if math.sqrt(gn) < ls.c_min:
                reason = f"|grad phi| = {math.sqrt(gn):.3e} below c_min on the projection path"
                break
            x = x - f * g / gn
        else:
            reason = f"no convergence in {maxit} iterations"
        if reason is None and abs(float(ls.phi(x, t)[0])) > tol:
            reason = f"no convergence in {maxit} iterations"
        if reason is None and domain is not None and not domain.contains(x)[0]:
            reason = f"projected point {tuple(x[0])} lies outside the domain"
        if reason is None:
            seeds.append(x[0])
            accepted.append(i)
        else:
            rejected.append((i, reason))
            logger.info("seed %d rejected: %s", i, reason)
    return np.array(seeds).reshape(-1, 2), np.array(accepted, dtype=np.int64), rejected


class VelocityCache:
    """Near-isometric velocity fields u_h(t), solved once per time."""

    def __init__(self, problem, mesh, k, boost=0, tau=DEFAULT_TAU):
        self.problem = problem
        self.session = SolverSession(mesh, k, boost, tau)
        self.solutions = {}

    def solution(self, t):
        key = float(t)
        if key not in self.solutions:
            session = self.session
            min_norm = guard_degeneracy(self.problem, session.mesh, key, session.order)
            with warnings.catch_warnings():
                # under the warn policy the guard above has reported already
                warnings.simplefilter("ignore", RuntimeWarning)
                sol = session.solve(self.problem.field, key)
            sol.info["min_grad_phi"] = min_norm
            self.solutions[key] = sol
        return self.solutions[key]

    def evaluate(self, t, points):
        """Velocities at ``points`` and a found-mask."""
        sol = self.solution(t)
        mesh = self.session.mesh
        tri, bary = mesh.locate(points)
        found = tri >= 0
        vel = np.zeros((len(points), 2))
        if found.any():
            vel[found], _ = sol.vspace.evaluate_at(sol.u, tri[found], bary[found])
        return vel, found


def _baseline(ls, t, points, mesh):
    tri, _ = mesh.locate(points)
    found = tri >= 0
    g = ls.grad_phi(points, t)
    degenerate = np.linalg.norm(g, axis=1) < ls.c_min
    vel = np.zeros((len(points), 2))
    ok = found & ~degenerate
    if ok.any():
        vel[ok] = normal_velocity(ls, points[ok], t)
    return vel, found, degenerate


def track(config, problem, cache=None, mesh=None, report=None):
    """Integrate particle trajectories.

    Parameters
    ----------
    config : TrackingConfig
    problem : ProblemSpec
        Must carry a level set.
    cache : VelocityCache, optional
        Reused across calls (e.g. for both modes on one mesh).
    mesh : Mesh, optional
        Defaults to level ``config.level`` of the problem's domain hierarchy.
    report : dict, optional
        Receives the rejected seeds and their reasons.

    Returns
    -------
    list of Trajectory
    """
    ls = problem.level_set
    if ls is None:
        raise ConfigError(f"problem {problem.name!r} has no level set to track")
    if mesh is None:
        mesh = cache.session.mesh if cache is not None else build_hierarchy(problem.domain, config.h0, config.level)[-1]
    raw = config.seeds if config.seeds is not None else ray_points(config.n_seeds)
    seeds, accepted, rejected = project_seeds(ls, raw, 0.0, problem.domain)
    if report is not None:
        report["rejected_seeds"] = [{"index": int(i), "reason": r} for i, r in rejected]
    if len(seeds) == 0:
        raise ConfigError("no seed could be projected onto the zero level set")
    if config.mode == "near_isometric" and cache is None:
        cache = VelocityCache(problem, mesh, config.k, config.boost, config.tau)

    N, dt = config.N, config.dt
    times = dt * np.arange(N + 1)
    pos = np.empty((N + 1, len(seeds), 2))
    pos[0] = seeds
    active = np.ones(len(seeds), dtype=bool)
    exit_step = np.full(len(seeds), -1)
    reason = [""] * len(seeds)
    for i in range(1, N + 1):
        x = pos[i - 1]
        if config.mode == "near_isometric":
            try:
                vel, found = cache.evaluate(times[i], x)
            except SolverError as exc:
                raise SolverError(f"tracking aborted at step {i} (t={times[i]:.6g}): {exc}") from None
            except DegeneracyError as exc:
                exc.step = i
                logger.error("tracking aborted at step %d: %s", i, exc)
                raise
            degenerate = np.zeros(len(x), dtype=bool)
        else:
            vel, found, degenerate = _baseline(ls, times[i], x, mesh)
        for j in np.nonzero(active & (~found | degenerate))[0]:
            active[j] = False
            exit_step[j] = i
            reason[j] = "left the mesh" if not found[j] else "degenerate level set gradient"
        pos[i] = np.where(active[:, None], x + dt * vel, x)
    out = []
    for j, sid in enumerate(accepted):
        out.append(Trajectory(
            seed_id=int(sid), times=times.copy(), positions=pos[:, j].copy(),
            lost=not active[j], exit_step=int(exit_step[j]) if exit_step[j] >= 0 else None,
            reason=reason[j],
        ))
    return out


@dataclass
class TrackingMetrics:
    drift: float
    drift_curve: np.ndarray
    distortion: np.ndarray
    n_lost: int
    n_used: int
    extra: dict = field(default_factory=dict)


def metrics(trajectories, ls):
    """Level-set drift and mean pairwise distance distortion.

    Lost particles are excluded.
    """
    kept = [tr for tr in trajectories if not tr.lost]
    n_lost = len(trajectories) - len(kept)
    if not kept:
        return TrackingMetrics(float("nan"), np.zeros(0), np.zeros(0), n_lost, 0)
    times = kept[0].times
    pos = np.stack([tr.positions for tr in kept], axis=1)  # (steps, n, 2)
    drift_curve = np.array([np.max(np.abs(ls.phi(pos[i], t))) for i, t in enumerate(times)])
    pairs = list(combinations(range(len(kept)), 2))
    if pairs:
        a, b = np.array(pairs).T
        d = np.linalg.norm(pos[:, a] - pos[:, b], axis=2)
        distortion = np.mean(np.abs(d - d[0]), axis=1)
    else:
        distortion = np.zeros(len(times))
    return TrackingMetrics(float(drift_curve.max()), drift_curve, distortion, n_lost, len(kept))


def exact_rotation_flow(seeds, times, omega=0.1):
    """Positions under the clockwise rotation flow ``xi(t) = R(-omega t) xi_0``."""
    seeds = np.atleast_2d(seeds)
    out = np.empty((len(times), len(seeds), 2))
    for i, t in enumerate(times):
        c, s = math.cos(omega * t), math.sin(omega * t)
        out[i] = seeds @ np.array([[c, -s], [s, c]])
    return out


def write_trajectories(trajectories, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed_id", "step", "t", "x", "y", "lost"])
        for tr in trajectories:
            for i, (t, p) in enumerate(zip(tr.times, tr.positions)):
                lost = int(tr.lost and tr.exit_step is not None and i >= tr.exit_step)
                w.writerow([tr.seed_id, i, "%.17g" % t, "%.17g" % p[0], "%.17g" % p[1], lost])


def write_metrics(path, times, drift, distortion_iso, distortion_baseline):
    """Metrics CSV; ``drift`` is the per-step drift of the near-isometric run."""
    def fmt(arr, i):
        return "NA" if arr is None or len(arr) == 0 else "%.17g" % arr[i]

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "drift", "distortion_iso", "distortion_baseline"])
        for i, t in enumerate(times):
            w.writerow([i, "%.17g" % t, fmt(drift, i), fmt(distortion_iso, i), fmt(distortion_baseline, i)])
