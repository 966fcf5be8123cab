import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import PLANE_TARGET
from isolevel import meshgen
from isolevel.cli import main
from isolevel.mesh import write_obj, write_off


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_off(meshgen.strip(20.0, 10.0, 1200), d / "strip.off")
    write_obj(meshgen.icosphere(10.0, 1), d / "ball.obj")
    write_off(meshgen.sphere_cap(10.0, np.pi / 3, 10), d / "cap.off")
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip().splitlines(), err.strip().splitlines()


@pytest.fixture(scope="module")
def planned(work):
    out = work / "runs"
    assert main(["plan", str(work / "strip.off"), "--kappa-c", "0.25", "--out", str(out)]) == 0
    (d,) = sorted(out.glob("plan-*"))
    return d


def test_plan_strip_defaults(planned):
    field = json.loads((planned / "field.json").read_text())
    vals = np.array(field["values"])
    assert vals.min() == 0.0
    assert vals.max() == pytest.approx(PLANE_TARGET * 20.0, rel=0.01)
    manifest = json.loads((planned / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"field.json", "report.json", "trace.csv"}
    assert manifest["checksums"]["field"] == field["checksum"]
    assert manifest["created"] is None
    assert json.loads((planned / "report.json").read_text())["status"] == "converged"


def test_plan_is_reproducible(work, planned, capsys):
    code, out, _ = run(capsys, "plan", work / "strip.off", "--kappa-c", "0.25", "--out", work / "runs")
    assert code == 0 and Path(out[-1]) == planned
    before = (planned / "field.json").read_bytes()
    assert main(["plan", str(work / "strip.off"), "--kappa-c", "0.25", "--out", str(work / "runs")]) == 0
    assert (planned / "field.json").read_bytes() == before


def test_path_multiresolution_and_idempotence(work, planned, capsys):
    code1, out1, _ = run(capsys, "path", planned / "field.json", "--h", "1", "--out", work / "paths")
    code2, out2, _ = run(capsys, "path", planned / "field.json", "--h", "0.25", "--out", work / "paths")
    assert code1 == code2 == 0
    d1, d2 = Path(out1[-1]), Path(out2[-1])
    assert d1 != d2
    m1 = json.loads((d1 / "manifest.json").read_text())
    m2 = json.loads((d2 / "manifest.json").read_text())
    assert m1["checksums"]["field"] == m2["checksums"]["field"]
    files = sorted(p.name for p in d1.iterdir())
    assert files == ["manifest.json", "schedule.json", "summary.json", "toolpath.csv", "toolpath.gcode", "toolpath.json", "topology.json"]
    snapshot = {p.name: p.read_bytes() for p in d1.iterdir()}
    code3, out3, _ = run(capsys, "path", planned / "field.json", "--h", "1", "--out", work / "paths")
    assert code3 == 0 and Path(out3[-1]) == d1
    assert {p.name: p.read_bytes() for p in d1.iterdir()} == snapshot
    summary = json.loads((d2 / "summary.json").read_text())
    assert summary["max_chord_error"] <= 0.01
    assert json.loads((d1 / "topology.json").read_text())["ok"]


def test_path_adaptive_matches_iso_scallop(work, planned, capsys):
    code, out, _ = run(capsys, "path", planned / "field.json", "--schedule", "adaptive", "--out", work / "paths")
    assert code == 0
    levels = np.array(json.loads((Path(out[-1]) / "schedule.json").read_text())["levels"])
    assert np.allclose(np.diff(levels)[1:-1], 1.0, rtol=0.03)


def test_analyze_with_baseline(work, planned, capsys):
    _, out, _ = run(capsys, "path", planned / "field.json", "--h", "1", "--out", work / "paths")
    code, out, _ = run(capsys, "analyze", planned / "field.json", out[-1], "--baseline", "--out", work / "analysis")
    assert code == 0
    assert out[0].startswith("frac(delta>5%)=")
    d = Path(out[-1])
    for name in ("deviation.json", "deviation_hist.csv", "curvature.json", "curvature_hist.csv", "oracle.json", "comparison.json", "comparison.csv"):
        assert (d / name).is_file()
    dev = json.loads((d / "deviation.json").read_text())
    assert dev["summary"]["frac_gt_5pct"] == 0.0
    assert len(json.loads((d / "oracle.json").read_text())["pairs"]) == 3
    assert (d / "deviation_hist.csv").read_text().splitlines()[0] == "bin_low,bin_high,count"


def test_corrupted_field_exit_3(work, planned, capsys):
    bad = work / "bad_field.json"
    doc = json.loads((planned / "field.json").read_text())
    doc["values"][5] += 1e-3
    bad.write_text(json.dumps(doc))
    code, _, err = run(capsys, "path", bad, "--out", work / "paths")
    assert code == 3
    assert len(err) == 1 and err[0].startswith("error[input]:") and "checksum" in err[0]


def test_analyze_path_from_other_field(work, planned, capsys):
    _, out, _ = run(capsys, "path", planned / "field.json", "--out", work / "paths")
    other = work / "other.json"
    doc = json.loads((planned / "field.json").read_text())
    doc["values"] = [2 * v for v in doc["values"]]
    doc.pop("checksum")
    other.write_text(json.dumps(doc))
    code, _, err = run(capsys, "analyze", other, out[-1], "--out", work / "analysis")
    assert code == 3 and "different field" in err[0]


def test_contour_on_closed_mesh(work, capsys):
    code, _, err = run(capsys, "plan", work / "ball.obj", "--mode", "contour", "--kappa-c", "0.25")
    assert code == 2
    assert err == ["error[usage]: contour mode requires boundary"]


def test_missing_kappa_c_names_key(work, capsys):
    code, _, err = run(capsys, "plan", work / "strip.off")
    assert code == 2 and "'kappa_c'" in err[0]


def test_config_file_and_override(work, capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("kappa_c: 0.25\nlam: 0.0\nmax_inner: 3\nmax_outer: 1\n")
    code, out, _ = run(capsys, "plan", work / "cap.off", "--mode", "contour", "--config", cfg, "--max-inner", "2", "--out", tmp_path)
    assert code == 0
    man = json.loads((Path(out[-1]) / "manifest.json").read_text())
    assert man["config"]["max_inner"] == 2 and man["config"]["kappa_c"] == 0.25


def test_strict_nonconverged_exit_4(work, capsys, tmp_path):
    code, _, err = run(
        capsys, "plan", work / "cap.off", "--mode", "contour", "--kappa-c", "0.25", "--max-inner", "1", "--max-outer", "1", "--strict", "--out", tmp_path
    )
    assert code == 4 and err[-1].startswith("error[solver]:")


def test_nonpositive_h_usage(work, planned, capsys):
    for h in ("-1", "0"):
        code, _, err = run(capsys, "path", planned / "field.json", "--h", h)
        assert code == 2 and err[0].startswith("error[usage]:")


def test_missing_files_exit_3(work, capsys):
    assert run(capsys, "plan", work / "nope.off", "--kappa-c", "0.25")[0] == 3
    assert run(capsys, "path", work / "nope.json")[0] == 3
    assert run(capsys, "mesh-info", work / "nope.obj")[0] == 3


def test_unknown_flag_and_no_command(capsys):
    assert run(capsys, "plan", "--bogus")[0] == 2
    assert run(capsys)[0] == 2


def test_mesh_info(work, capsys):
    code, out, _ = run(capsys, "mesh-info", work / "ball.obj")
    info = json.loads("\n".join(out))
    assert code == 0 and info["closed"] and info["euler_characteristic"] == 2
    assert info["faces"] == 80 and info["boundary_loops"] == []


def test_console_entry_point(work):
    proc = subprocess.run([sys.executable, "-m", "isolevel.cli", "mesh-info", str(work / "strip.off")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert len(json.loads(proc.stdout)["boundary_loops"]) == 1
