"""Error norms, reference solves, convergence orders and reports."""

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .assembly import _chunks, _quad_points, _weights
from .errors import ConfigError, EvaluationError
from .kernel import DEFAULT_TAU
from .mesh import build_hierarchy, refine_uniform
from .quadrature import triangle_rule
from .saddle import solve_problem

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "h", "ndof_u", "ndof_lambda", "err_u_h1", "err_u_l2",
               "err_lambda_h1", "eoc_u_h1", "energy", "lambda_h1", "ratio")
NA = "NA"
EOC_FLOOR = 1e-10
# coarse quadrature points may sit outside a finer polygonal hole boundary by
# the chord sagitta; such points are evaluated by extrapolating the nearest
# fine element
REFERENCE_CLAMP = 0.05


@dataclass
class ErrorRecord:
    level: int
    h: float
    ndof_u: int
    ndof_lambda: int
    err_u_h1: float
    err_u_l2: float
    err_lambda_h1: Optional[float] = None
    eoc_u_h1: Optional[float] = None
    energy: Optional[float] = None
    lambda_h1: Optional[float] = None
    ratio: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def row(self):
        return {name: getattr(self, name) for name in CSV_COLUMNS}


class _Reference:
    """Evaluator of (u, grad u, lam, grad lam) at arbitrary points."""

    def __init__(self, problem=None, solution=None, t=0.0, clamp=REFERENCE_CLAMP):
        self.problem = problem
        self.solution = solution
        self.t = t
        self.clamp = clamp
        self.max_outside = 0.0
        self.n_clamped = 0

    @property
    def has_lambda(self):
        if self.solution is not None:
            return True
        return self.problem is not None and self.problem.exact_lambda is not None

    def _locate(self, x):
        mesh = self.solution.vspace.mesh
        tri, bary = mesh.locate(x, tol=1e-10, clamp=self.clamp)
        if np.any(tri < 0):
            bad = x[np.nonzero(tri < 0)[0][0]]
            raise EvaluationError(f"reference mesh does not contain the point {tuple(bad)}")
        outside = bary.min(axis=1) < -1e-10
        self.n_clamped += int(outside.sum())
        if outside.any():
            self.max_outside = max(self.max_outside, float(-bary.min(axis=1)[outside].min()))
        return tri, bary

    def evaluate(self, x, want_lambda):
        if self.solution is not None:
            tri, bary = self._locate(x)
            u, gu = self.solution.vspace.evaluate_at(self.solution.u, tri, bary)
            lam = glam = None
            if want_lambda:
                lam, glam = self.solution.sspace.evaluate_at(self.solution.lam, tri, bary)
            return u, gu, lam, glam
        p = self.problem
        u, gu = p.exact_u(x, self.t), p.exact_grad_u(x, self.t)
        lam = glam = None
        if want_lambda and p.exact_lambda is not None:
            lam, glam = p.exact_lambda(x, self.t), p.exact_grad_lambda(x, self.t)
        return u, gu, lam, glam


def error_norms(solution, reference, modulo_kernel=True, order=None, t=None):
    """H1 and L2 errors of ``solution`` against an exact or discrete reference.

    Parameters
    ----------
    solution : Solution
        Coarse solution (from :func:`solve_problem`).
    reference : ProblemSpec or Solution
        Exact closed forms, or a solution on a nested finer mesh.
    modulo_kernel : bool
        Remove the H1 projection of the velocity difference onto the
        detected kernel before taking norms.
    order : int, optional
        Quadrature order; default ``2k + 2``.

    Returns
    -------
    dict
        ``err_u_h1``, ``err_u_l2``, ``err_lambda_h1`` (None without a
        multiplier reference), plus clamping statistics.
    """
    vspace, sspace = solution.vspace, solution.sspace
    mesh = vspace.mesh
    k = vspace.degree
    t = solution.info.get("t", 0.0) if t is None else t
    rule = triangle_rule(2 * k + 2 if order is None else order)
    if hasattr(reference, "exact_u"):
        if reference.exact_u is None:
            raise ConfigError(f"problem {reference.name!r} has no exact solution")
        ref = _Reference(problem=reference, t=t)
    else:
        ref = _Reference(solution=reference, t=t)
    want_lambda = ref.has_lambda
    W = solution.kernel.vectors if (modulo_kernel and solution.kernel is not None) else np.zeros((vspace.ndofs, 0))
    m = W.shape[1]
    ns = vspace.nscalar

    chunks = []
    proj = np.zeros(m)
    for tri in _chunks(mesh.ntriangles):
        w = _weights(mesh, tri, rule)
        T, nq = w.shape
        x = _quad_points(mesh, tri, rule).reshape(-1, 2)
        phi, dphi = vspace.tabulate(tri, rule.points)
        dofs = vspace.cell_dofs[tri]
        uloc = np.stack([solution.u[dofs], solution.u[dofs + ns]], axis=1)  # (T, 2, nloc)
        uh = np.einsum("tca,qa->tqc", uloc, phi)
        guh = np.einsum("tca,tqad->tqcd", uloc, dphi)
        ru, rgu, rl, rgl = ref.evaluate(x, want_lambda)
        d = ru.reshape(T, nq, 2) - uh
        gd = rgu.reshape(T, nq, 2, 2) - guh
        wv = wg = None
        if m:
            wloc = np.stack([W[dofs], W[dofs + ns]], axis=1)  # (T, 2, nloc, m)
            wv = np.einsum("tcam,qa->tqcm", wloc, phi)
            wg = np.einsum("tcam,tqad->tqcdm", wloc, dphi)
            proj += np.einsum("tq,tqcdm,tqcd->m", w, wg, gd) + np.einsum("tq,tqcm,tqc->m", w, wv, d)
        ld = lgd = None
        if want_lambda:
            lloc = solution.lam[dofs]
            lh = lloc @ phi.T
            glh = np.einsum("ta,tqad->tqd", lloc, dphi)
            ld = rl.reshape(T, nq) - lh
            lgd = rgl.reshape(T, nq, 2) - glh
        chunks.append((w, d, gd, wv, wg, ld, lgd))

    u_l2 = u_semi = l_l2 = l_semi = 0.0
    for w, d, gd, wv, wg, ld, lgd in chunks:
        if m:
            d = d - wv @ proj
            gd = gd - wg @ proj
        u_l2 += float(np.sum(w * np.einsum("tqc,tqc->tq", d, d)))
        u_semi += float(np.sum(w * np.einsum("tqcd,tqcd->tq", gd, gd)))
        if want_lambda:
            l_l2 += float(np.sum(w * ld * ld))
            l_semi += float(np.sum(w * np.einsum("tqd,tqd->tq", lgd, lgd)))
    return {
        "err_u_h1": math.sqrt(u_l2 + u_semi),
        "err_u_l2": math.sqrt(u_l2),
        "err_lambda_h1": math.sqrt(l_l2 + l_semi) if want_lambda else None,
        "kernel_component": [float(c) for c in proj],
        "n_clamped": ref.n_clamped,
        "max_outside_bary": ref.max_outside,
    }


def reference_solve(problem, mesh, levels_finer=2, k=1, boost=0, tau=DEFAULT_TAU):
    """Solve on ``mesh`` refined ``levels_finer`` times.

    Returns
    -------
    solution : Solution
    vspace : FESpace
    """
    if levels_finer < 2:
        raise ConfigError(f"reference needs at least 2 extra levels, got {levels_finer}")
    fine = mesh
    for _ in range(levels_finer):
        fine = refine_uniform(fine)
    sol = solve_problem(problem, fine, k, boost=boost, tau=tau)
    return sol, sol.vspace


def eoc(errors, floor=EOC_FLOOR):
    """Orders ``log2(e_i / e_{i+1})``; None where either error is below ``floor``.

    Accepts a list of floats or of :class:`ErrorRecord` (H1 velocity error).
    """
    vals = [r.err_u_h1 if isinstance(r, ErrorRecord) else r for r in errors]
    out = []
    for a, b in zip(vals[:-1], vals[1:]):
        if a is None or b is None or not (a > floor and b > floor):
            out.append(None)
        else:
            out.append(math.log2(a / b))
    return out


def convergence_study(problem, k, levels, boost=0, h0=1.0, reference="auto",
                      levels_finer=2, tau=DEFAULT_TAU, modulo_kernel=True, order=None):
    """Errors on a sequence of uniformly refined meshes.

    Parameters
    ----------
    levels : int
        Number of study meshes (levels ``0 .. levels - 1``).
    reference : {"auto", "exact", "discrete"}
        ``auto`` uses the exact solution when the problem has one.

    Returns
    -------
    records : list of ErrorRecord
    meta : dict
    """
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    if reference == "auto":
        reference = "exact" if problem.has_exact else "discrete"
    if reference == "exact" and not problem.has_exact:
        raise ConfigError(f"problem {problem.name!r} has no exact solution")
    if reference not in ("exact", "discrete"):
        raise ConfigError(f"unknown reference mode {reference!r}")
    start = time.perf_counter()
    meshes = build_hierarchy(problem.domain, h0, levels - 1)
    meta = {
        "problem": problem.metadata(),
        "k": k,
        "boost": boost,
        "levels": levels,
        "reference": reference,
        "modulo_kernel": modulo_kernel,
        "tau": tau,
    }
    ref = problem
    if reference == "discrete":
        ref_sol, _ = reference_solve(problem, meshes[-1], levels_finer, k, boost, tau)
        ref = ref_sol
        meta["reference_level"] = levels - 1 + levels_finer
        meta["reference_ndof"] = int(ref_sol.u.size + ref_sol.lam.size)
        meta["reference_kernel_dim"] = int(ref_sol.kernel.dim)
    records = []
    for level, mesh in enumerate(meshes):
        sol = solve_problem(problem, mesh, k, boost=boost, tau=tau)
        errs = error_norms(sol, ref, modulo_kernel=modulo_kernel, order=order)
        records.append(ErrorRecord(
            level=level, h=mesh.h, ndof_u=int(sol.u.size), ndof_lambda=int(sol.lam.size),
            err_u_h1=errs["err_u_h1"], err_u_l2=errs["err_u_l2"],
            err_lambda_h1=errs["err_lambda_h1"], energy=sol.info["energy"],
            lambda_h1=sol.info["lambda_h1"], ratio=sol.info["ratio"],
            extra={"kernel_dim": sol.kernel.dim, "residuals": sol.residuals,
                   "alpha": [float(a) for a in sol.alpha], "n_clamped": errs["n_clamped"],
                   "max_outside_bary": errs["max_outside_bary"]},
        ))
        logger.info("level %d h=%.4f err_u_h1=%.3e", level, mesh.h, errs["err_u_h1"])
    for rec, order_ in zip(records[1:], eoc(records)):
        rec.eoc_u_h1 = order_
    meta["eoc_lambda_h1"] = eoc([r.err_lambda_h1 for r in records])
    meta["seconds"] = time.perf_counter() - start
    return records, meta


def _fmt(v):
    if v is None:
        return NA
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def _parse(name, s):
    if s == NA:
        return None
    if name in ("level", "ndof_u", "ndof_lambda"):
        return int(s)
    return float(s)


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_fmt(v) for v in r.row().values()])


def read_csv(path):
    """Parse a report CSV back into :class:`ErrorRecord` objects."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [ErrorRecord(**{k: _parse(k, v) for k, v in row.items()}) for row in reader]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def report(records, path, meta=None):
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths."""
    base = str(path)
    for ext in (".csv", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    csv_path, json_path = base + ".csv", base + ".json"
    write_csv(records, csv_path)
    doc = {"meta": _jsonable(meta or {}), "records": [_jsonable(asdict(r)) for r in records]}
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path

