import csv
import json
import subprocess
import sys

import pytest

from killingfem.cli import CONFIG_SCHEMA, DEFAULTS, run
from killingfem.mesh import read_mesh


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_solve_synthetic(tmp_path):
    out = tmp_path / "s"
    assert run(["solve", "--problem", "synthetic", "--k", "2", "--levels", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["kernel_dim"] == 1 and summary["k"] == 2 and summary["level"] == 3
    assert max(summary["residuals"].values()) <= 1e-9 * summary["scale"]
    assert (out / "solution.vtk").read_text().startswith("# vtk")
    man = _manifest(out)
    assert man["exit_code"] == 0 and man["config"]["k"] == 2
    assert set(man["versions"]) >= {"numpy", "scipy", "killingfem"}
    assert man["outputs"] == ["solution.vtk", "summary.json"]


def test_critical_domain_exit_3(tmp_path):
    out = tmp_path / "c"
    code = run(["solve", "--problem", "deforming_ellipse", "--param", "domain=critical",
                "--degeneracy", "fail", "--out", str(out)])
    assert code == 3
    assert "degenerate" in _manifest(out)["error"]


def test_warn_policy_solves(tmp_path):
    out = tmp_path / "w"
    with pytest.warns(RuntimeWarning):
        code = run(["solve", "--problem", "deforming_ellipse", "--param", "domain=critical",
                    "--degeneracy", "warn", "--levels", "0", "--out", str(out)])
    # the unit normal is undefined at the origin vertex
    assert code in (0, 4)


def test_unknown_problem_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "sphere"}))
    out = tmp_path / "u"
    assert run(["solve", "--config", str(cfg), "--out", str(out)]) == 2
    assert "unknown problem" in _manifest(out)["error"]
    with pytest.raises(SystemExit) as exc:
        run(["solve", "--problem", "sphere"])
    assert exc.value.code == 2


@pytest.mark.parametrize("cfg", [
    {"problem": "synthetic", "bogus": 1},
    {"k": "two"},
    {"degeneracy": "ignore"},
    {"tracking": {"N": 0}},
    {"tracking": {"dt": 0.1}},
    {"problem": "synthetic", "params": {"omega": 1}},
])
def test_bad_configs_exit_2(tmp_path, cfg):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert run(["kernel", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_unreadable_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    assert run(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert run(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_flags_override_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"problem": "rotating_ellipse", "k": 3, "levels": 0, "tracking": {"N": 4}}))
    out = tmp_path / "o"
    assert run(["kernel", "--config", str(path), "--k", "1", "--out", str(out)]) == 0
    cfg = _manifest(out)["config"]
    assert cfg["k"] == 1 and cfg["problem"] == "rotating_ellipse" and cfg["tracking"]["N"] == 4
    assert cfg["tracking"]["n_seeds"] == DEFAULTS["tracking"]["n_seeds"]


def test_list_k_only_for_converge(tmp_path):
    assert run(["solve", "--k", "1,2", "--out", str(tmp_path / "o")]) == 2


def test_kernel_reports(tmp_path):
    out = tmp_path / "k1"
    assert run(["kernel", "--problem", "synthetic", "--levels", "2", "--out", str(out)]) == 0
    doc = json.loads((out / "kernel.json").read_text())
    assert [lv["dim"] for lv in doc["levels"]] == [1, 1, 1]
    assert all(lv["alignment_zperp"] >= 1 - 1e-8 for lv in doc["levels"])
    assert doc["rank_diagnostic"]["dim_upper_bound"] == 1 and doc["rank_diagnostic"]["n_points"] == 20
    out = tmp_path / "k2"
    assert run(["kernel", "--problem", "rotating_ellipse", "--levels", "1", "--out", str(out)]) == 0
    doc = json.loads((out / "kernel.json").read_text())
    assert [lv["dim"] for lv in doc["levels"]] == [0, 0]
    assert doc["rank_diagnostic"]["dim_upper_bound"] == 0


def test_mesh_command(tmp_path):
    out = tmp_path / "m"
    assert run(["mesh", "--problem", "deforming_ellipse", "--param", "domain=corner", "--levels", "1",
                "--out", str(out)]) == 0
    mesh = read_mesh(out / "mesh.txt")
    assert mesh.check_conformity() and mesh.ntriangles == 4 * 64
    assert (out / "mesh.vtk").exists()


def test_converge_rigid_sweep(tmp_path):
    out = tmp_path / "r"
    assert run(["converge", "--problem", "rotating_ellipse", "--boost", "0,1,2", "--levels", "1",
                "--out", str(out)]) == 0
    for l in (0, 1, 2):
        rows = list(csv.DictReader(open(out / f"rotating_ellipse_k1_l{l}.csv")))
        assert len(rows) == 2 and all(float(r["err_u_h1"]) <= 1e-8 for r in rows)
        assert rows[1]["eoc_u_h1"] == "NA"
        meta = json.loads((out / f"rotating_ellipse_k1_l{l}.json").read_text())["meta"]
        assert meta["boost"] == l


def test_converge_synthetic(tmp_path):
    out = tmp_path / "c"
    assert run(["converge", "--problem", "synthetic", "--k", "1,2", "--levels", "3", "--out", str(out)]) == 0
    for k in (1, 2):
        rows = list(csv.DictReader(open(out / f"synthetic_k{k}_l0.csv")))
        assert float(rows[-1]["eoc_u_h1"]) == pytest.approx(k, abs=0.2)


def test_track_command(tmp_path):
    out = tmp_path / "t"
    assert run(["track", "--problem", "deforming_ellipse", "--param", "domain=slot", "--k", "1",
                "--levels", "1", "--N", "5", "--t-end", "0.25", "--n-seeds", "6", "--out", str(out)]) == 0
    doc = json.loads((out / "tracking.json").read_text())
    # the seeds on the x axis project into the slot
    assert [r["index"] for r in doc["rejected_seeds"]] == [0, 3]
    for mode in ("near_isometric", "normal_baseline"):
        rows = list(csv.DictReader(open(out / f"trajectories_{mode}.csv")))
        assert len(rows) == 4 * 6
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert len(rows) == 6 and rows[0]["distortion_iso"] == "0"
    assert set(doc["modes"]) == {"near_isometric", "normal_baseline"}


def test_track_rotation_reports_exact_error(tmp_path):
    out = tmp_path / "t"
    assert run(["track", "--problem", "rotating_ellipse", "--levels", "0", "--N", "4", "--mode", "near_isometric",
                "--out", str(out)]) == 0
    doc = json.loads((out / "tracking.json").read_text())
    assert doc["modes"]["near_isometric"]["max_error_exact_flow"] < 1e-2
    assert not (out / "trajectories_normal_baseline.csv").exists()


def test_track_needs_level_set(tmp_path):
    assert run(["track", "--problem", "synthetic", "--out", str(tmp_path / "o")]) == 2


def test_schema_is_published():
    import jsonschema
    jsonschema.Draft202012Validator.check_schema(CONFIG_SCHEMA)
    jsonschema.validate({k: v for k, v in DEFAULTS.items()}, CONFIG_SCHEMA)


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "killingfem.cli", "kernel", "--problem", "synthetic",
                          "--levels", "0", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0
    assert "kernel dims" in res.stdout
