"""Command-line front end.

Subcommands ``mesh``, ``solve``, ``converge``, ``track`` and ``kernel`` read an
optional JSON config (see :data:`CONFIG_SCHEMA`); flags override config values.
All data goes to the output directory, together with ``manifest.json``.

Exit codes: 0 success, 2 configuration error, 3 degenerate level set under
the ``fail`` policy, 4 solver failure.
"""

import argparse
from importlib import metadata
import json
import logging
import os
import platform
import sys
import time
import warnings

import jsonschema
import numpy as np
import scipy

from . import __version__
from .analysis import _jsonable, convergence_study, report
from .assembly import assemble_b, assemble_h1_scalar, default_order
from .errors import ConfigError, DegeneracyError, MeshParseError, SolverError
from .fespace import build_space, interpolate
from .kernel import DEFAULT_TAU, discrete_kernel, rank_diagnostic, rigid_motion_basis
from .mesh import build_hierarchy, write_mesh
from .problems import PROBLEM_PARAMS, PROBLEMS, get_problem
from .saddle import guard_degeneracy, solve_problem
from .tracking import (MODES, TrackingConfig, VelocityCache, exact_rotation_flow, metrics, track,
                       write_metrics, write_trajectories)
from .vtk import write_solution_vtk, write_vtk

logger = logging.getLogger("killingfem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_SOLVER = 4

COMMANDS = ("mesh", "solve", "converge", "track", "kernel")

_int_or_list = {"oneOf": [
    {"type": "integer", "minimum": 0},
    {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "killingfem run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "problem": {"type": "string"},
        "params": {"type": "object"},
        "k": _int_or_list,
        "boost": _int_or_list,
        "levels": {"type": "integer", "minimum": 0},
        "h0": {"type": "number", "exclusiveMinimum": 0},
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "degeneracy": {"enum": ["fail", "warn"]},
        "out": {"type": "string"},
        "reference": {"enum": ["auto", "exact", "discrete"]},
        "levels_finer": {"type": "integer", "minimum": 2},
        "ordering": {"enum": ["nd", "colamd"]},
        "tracking": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "n_seeds": {"type": "integer", "minimum": 2},
                "modes": {"type": "array", "items": {"enum": list(MODES)}, "minItems": 1},
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_points": {"type": "integer", "minimum": 3},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "problem": "synthetic",
    "params": {},
    "k": 1,
    "boost": 0,
    "levels": 2,
    "h0": 1.0,
    "tau": DEFAULT_TAU,
    "out": "out",
    "reference": "auto",
    "levels_finer": 2,
    "ordering": "nd",
    "tracking": {"N": 60, "t_end": 1.0, "n_seeds": 16, "modes": list(MODES)},
    "kernel": {"n_points": 20, "seed": 0},
}


def _comma_ints(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals if len(vals) > 1 else vals[0]


def build_parser():
    parser = argparse.ArgumentParser(prog="killingfem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--problem", choices=sorted(PROBLEMS))
        p.add_argument("--param", action="append", default=None, metavar="KEY=VALUE",
                       help="problem parameter, VALUE parsed as JSON when possible (repeatable)")
        p.add_argument("--k", type=_comma_ints, help="polynomial degree (comma list for converge)")
        p.add_argument("--boost", type=_comma_ints, help="quadrature boost l (comma list for converge)")
        p.add_argument("--levels", type=int,
                       help="uniform refinements of the base mesh (sweeps cover levels 0..LEVELS)")
        p.add_argument("--h0", type=float, help="target mesh size of the base mesh")
        p.add_argument("--tau", type=float, help="relative kernel detection threshold")
        p.add_argument("--degeneracy", choices=["fail", "warn"])
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "converge":
            p.add_argument("--reference", choices=["auto", "exact", "discrete"])
            p.add_argument("--levels-finer", dest="levels_finer", type=int)
        if name == "track":
            p.add_argument("--N", dest="N", type=int, help="number of time steps")
            p.add_argument("--t-end", dest="t_end", type=float)
            p.add_argument("--n-seeds", dest="n_seeds", type=int)
            p.add_argument("--mode", choices=list(MODES), action="append", dest="modes")
        if name == "kernel":
            p.add_argument("--n-points", dest="n_points", type=int)
            p.add_argument("--seed", type=int)
    return parser


def _parse_param(item):
    if "=" not in item:
        raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(args):
    """Merge defaults, the JSON config file and command-line flags.

    Raises
    ------
    ConfigError
        Unreadable or schema-violating config, or invalid flag values.
    """
    file_cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        validate_config(file_cfg)
    cfg = json.loads(json.dumps(DEFAULTS))
    for key, value in file_cfg.items():
        if isinstance(value, dict) and key in ("tracking", "kernel"):
            cfg[key].update(value)
        else:
            cfg[key] = value
    flags = vars(args)
    for key in ("problem", "k", "boost", "levels", "h0", "tau", "degeneracy", "out", "reference", "levels_finer"):
        if flags.get(key) is not None:
            cfg[key] = flags[key]
    for key in ("N", "t_end", "n_seeds", "modes"):
        if flags.get(key) is not None:
            cfg["tracking"][key] = flags[key]
    for key in ("n_points", "seed"):
        if flags.get(key) is not None:
            cfg["kernel"][key] = flags[key]
    if flags.get("param"):
        cfg["params"] = dict(cfg["params"], **dict(_parse_param(p) for p in flags["param"]))
    validate_config(cfg)
    if args.command != "converge" and (isinstance(cfg["k"], list) or isinstance(cfg["boost"], list)):
        raise ConfigError(f"'{args.command}' takes a single k and boost")
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def make_problem(cfg):
    """Build the configured problem; the degeneracy flag applies to level-set problems only."""
    name = cfg["problem"]
    params = dict(cfg["params"])
    if cfg.get("degeneracy") is not None:
        if name in PROBLEM_PARAMS and "policy" in PROBLEM_PARAMS[name]:
            params["policy"] = cfg["degeneracy"]
        else:
            logger.info("problem %s has no level set; --degeneracy ignored", name)
    return get_problem(name, **params)


def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mesh(cfg, problem):
    return build_hierarchy(problem.domain, cfg["h0"], cfg["levels"])[-1]


def cmd_mesh(cfg, out):
    problem = make_problem(cfg)
    mesh = _mesh(cfg, problem)
    msh, vtk = os.path.join(out, "mesh.txt"), os.path.join(out, "mesh.vtk")
    write_mesh(mesh, msh)
    write_vtk(vtk, mesh)
    print(f"mesh level {mesh.level}: {mesh.nvertices} vertices, {mesh.ntriangles} triangles, "
          f"h={mesh.h:.4g}, min angle {mesh.min_angle():.1f} deg")
    return [msh, vtk], {"nvertices": mesh.nvertices, "ntriangles": mesh.ntriangles, "h": mesh.h}


def cmd_solve(cfg, out):
    problem = make_problem(cfg)
    mesh = _mesh(cfg, problem)
    sol = solve_problem(problem, mesh, cfg["k"], boost=cfg["boost"], tau=cfg["tau"], ordering=cfg["ordering"])
    summary = sol.summary()
    summary["kernel_dim"] = sol.kernel.dim
    summary["problem"] = problem.metadata()
    vtk, js = os.path.join(out, "solution.vtk"), os.path.join(out, "summary.json")
    write_solution_vtk(vtk, sol)
    _write_json(js, summary)
    print(f"{problem.name} k={cfg['k']} level={mesh.level}: kernel dim {sol.kernel.dim}, "
          f"energy {summary['energy']:.6g}, max residual {max(sol.residuals.values()):.2e}")
    return [vtk, js], {"kernel_dim": sol.kernel.dim}


def cmd_converge(cfg, out):
    problem = make_problem(cfg)
    outputs, results = [], {}
    for k in _as_list(cfg["k"]):
        for boost in _as_list(cfg["boost"]):
            records, meta = convergence_study(problem, k, cfg["levels"] + 1, boost=boost, h0=cfg["h0"],
                                              reference=cfg["reference"], levels_finer=cfg["levels_finer"],
                                              tau=cfg["tau"])
            csv_path, json_path = report(records, os.path.join(out, f"{problem.name}_k{k}_l{boost}"), meta)
            outputs += [csv_path, json_path]
            terminal = records[-1].eoc_u_h1 if len(records) > 1 else None
            results[f"k{k}_l{boost}"] = {"terminal_eoc_u_h1": terminal, "finest_err_u_h1": records[-1].err_u_h1}
            eoc_txt = "NA" if terminal is None else f"{terminal:.3f}"
            print(f"{problem.name} k={k} l={boost}: finest err_u_h1 {records[-1].err_u_h1:.3e}, "
                  f"terminal EOC {eoc_txt} ({meta['seconds']:.1f}s)")
    return outputs, results


def cmd_track(cfg, out):
    problem = make_problem(cfg)
    if problem.level_set is None:
        raise ConfigError(f"problem {problem.name!r} has no level set to track")
    tcfg = cfg["tracking"]
    k = cfg["k"]
    mesh = _mesh(cfg, problem)
    cache = VelocityCache(problem, mesh, k, cfg["boost"], cfg["tau"])
    outputs, runs, rep = [], {}, {}
    for mode in tcfg["modes"]:
        conf = TrackingConfig(N=tcfg["N"], t_end=tcfg["t_end"], mode=mode, level=cfg["levels"], k=k,
                              boost=cfg["boost"], h0=cfg["h0"], tau=cfg["tau"], n_seeds=tcfg["n_seeds"])
        trajs = track(conf, problem, cache=cache, mesh=mesh, report=rep)
        path = os.path.join(out, f"trajectories_{mode}.csv")
        write_trajectories(trajs, path)
        outputs.append(path)
        runs[mode] = (trajs, metrics(trajs, problem.level_set))
        m = runs[mode][1]
        print(f"{mode}: drift {m.drift:.4g}, D(t_end) {m.distortion[-1]:.4g}, lost {m.n_lost}/{len(trajs)}")
    first = next(iter(runs.values()))[0]
    times = first[0].times
    iso = runs.get("near_isometric", (None, None))[1]
    base = runs.get("normal_baseline", (None, None))[1]
    mpath = os.path.join(out, "metrics.csv")
    write_metrics(mpath, times,
                  iso.drift_curve if iso else None,
                  iso.distortion if iso else None,
                  base.distortion if base else None)
    doc = {"rejected_seeds": rep.get("rejected_seeds", []), "modes": {}}
    for mode, (trajs, m) in runs.items():
        entry = {"drift": m.drift, "distortion_final": m.distortion[-1] if len(m.distortion) else None,
                 "n_lost": m.n_lost, "n_used": m.n_used,
                 "lost": [{"seed_id": tr.seed_id, "exit_step": tr.exit_step, "reason": tr.reason}
                          for tr in trajs if tr.lost]}
        if problem.name == "rotating_ellipse":
            seeds = np.array([tr.positions[0] for tr in trajs])
            exact = exact_rotation_flow(seeds, times, problem.params["omega"])
            pos = np.stack([tr.positions for tr in trajs], axis=1)
            entry["max_error_exact_flow"] = float(np.max(np.linalg.norm(pos - exact, axis=2)))
        doc["modes"][mode] = entry
    jpath = os.path.join(out, "tracking.json")
    _write_json(jpath, doc)
    outputs += [mpath, jpath]
    return outputs, {mode: e["drift"] for mode, e in doc["modes"].items()}


def _sample_points(domain, n, seed):
    rng = np.random.default_rng(seed)
    pts = np.zeros((0, 2))
    while len(pts) < n:
        cand = rng.uniform(-domain.a, domain.a, size=(4 * n, 2))
        pts = np.vstack([pts, cand[domain.contains(cand)]])
    return pts[:n]


def kernel_report(problem, meshes, k, boost=0, tau=DEFAULT_TAU):
    """Detected kernel per mesh level, without solving the saddle system."""
    t = problem.t
    rows = []
    for mesh in meshes:
        order = default_order(k, boost)
        guard_degeneracy(problem, mesh, t, order)
        sspace = build_space(mesh, k)
        vspace = sspace.vector()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            B = assemble_b(sspace, vspace, problem.field, t, order)
        M1 = assemble_h1_scalar(sspace, order)
        Mv = scipy.sparse.block_diag([M1, M1], format="csr")
        kb = discrete_kernel(B, M1, Mv, rigid_motion_basis(vspace), tau=tau)
        row = {"level": mesh.level, "h": mesh.h, **kb.to_dict()}
        zp = problem.extras.get("zperp")
        if zp is not None and kb.dim == 1:
            zv = interpolate(vspace, zp)
            w = kb.vectors[:, 0]
            row["alignment_zperp"] = abs(float(w @ (Mv @ zv))) / np.sqrt(float(zv @ (Mv @ zv)) * float(w @ (Mv @ w)))
        rows.append(row)
    return rows


def cmd_kernel(cfg, out):
    problem = make_problem(cfg)
    meshes = build_hierarchy(problem.domain, cfg["h0"], cfg["levels"])
    levels = kernel_report(problem, meshes, cfg["k"], cfg["boost"], cfg["tau"])
    kcfg = cfg["kernel"]
    pts = _sample_points(problem.domain, kcfg["n_points"], kcfg["seed"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sv, bound = rank_diagnostic(problem.field, problem.t, pts)
    doc = {
        "problem": problem.metadata(),
        "expected_dim": problem.expected_kernel_dim,
        "levels": levels,
        "rank_diagnostic": {"n_points": kcfg["n_points"], "seed": kcfg["seed"],
                            "singular_values": sv, "dim_upper_bound": bound},
    }
    path = os.path.join(out, "kernel.json")
    _write_json(path, doc)
    dims = [r["dim"] for r in levels]
    print(f"{problem.name}: detected kernel dims per level {dims}, rank bound {bound}")
    return [path], {"dims": dims}


HANDLERS = {"mesh": cmd_mesh, "solve": cmd_solve, "converge": cmd_converge, "track": cmd_track,
            "kernel": cmd_kernel}


def _versions():
    out = {"killingfem": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "modepy", "pymetis", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def run(argv=None):
    """Parse ``argv``, run the subcommand and return the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                "versions": _versions()}
    cfg, code, out = None, EXIT_OK, None
    try:
        cfg = load_config(args)
        manifest["config"] = cfg
        out = cfg["out"]
        os.makedirs(out, exist_ok=True)
        outputs, results = HANDLERS[args.command](cfg, out)
        manifest["outputs"] = [os.path.basename(p) for p in outputs]
        manifest["results"] = results
    except (ConfigError, MeshParseError) as exc:
        code, manifest["error"] = EXIT_CONFIG, f"config error: {exc}"
    except DegeneracyError as exc:
        code, manifest["error"] = EXIT_DEGENERATE, f"degenerate level set: {exc}"
    except SolverError as exc:
        code, manifest["error"] = EXIT_SOLVER, f"solver failure: {exc}"
    manifest["exit_code"] = code
    manifest["seconds"] = time.perf_counter() - start
    if code:
        print(f"error: {manifest['error']}", file=sys.stderr)
    out = out or args.out
    if out is not None:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "manifest.json"), manifest)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
