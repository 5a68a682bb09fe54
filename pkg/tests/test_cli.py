import csv
import json
import xml.etree.ElementTree as ET

import pytest

from twolayer import PhysParams, shear_solution
from twolayer.cli import main
from twolayer.io import write_solution


def _config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(path)


BASE = {"params": {"k": 2, "H": 0.5, "omega0": 0.3}}


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    cfg = _config(out, "c.json", {**BASE, "A": 0.2, "N": 64})
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    (path,) = out.glob("solution_*.json")
    return path


def test_malformed_config_reports_position(tmp_path, capsys):
    cfg = _config(tmp_path, "bad.json", '{"params": {"k": 2,\n  "H": }')
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 4
    err = capsys.readouterr().err
    assert "bad.json:2:" in err
    cfg = _config(tmp_path, "extra.json", {**BASE, "colour": "red"})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 4
    assert "colour" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 4


def test_solve_shear_record(tmp_path):
    cfg = _config(tmp_path, "s.json", {**BASE, "A": 0, "N": 16})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    (path,) = tmp_path.glob("solution_*.json")
    rec = json.loads(path.read_text())
    assert rec["meta"]["residual_max"] < 1e-12
    assert main(["verify", str(path), "--out", str(tmp_path)]) == 0


def test_newton_failure_exit_code(tmp_path):
    cfg = _config(tmp_path, "n.json", {**BASE, "A": 0.03, "N": 32, "newton": {"max_iterations": 1}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_verify_fresh_and_perturbed(solved, tmp_path):
    assert main(["verify", str(solved), "--out", str(tmp_path)]) == 0
    checks = json.loads(next(tmp_path.glob("*_verify.json")).read_text())
    assert all(c["passed"] for c in checks)
    rec = json.loads(solved.read_text())
    rec["solution"]["Y_hat"][3] += 1e-3
    bad = tmp_path / "perturbed.json"
    bad.write_text(json.dumps(rec))
    assert main(["verify", str(bad), "--out", str(tmp_path)]) == 1
    checks = {c["name"]: c for c in json.loads((tmp_path / "perturbed_verify.json").read_text())}
    assert not checks["residual"]["passed"]


def test_fields_outputs(solved, tmp_path):
    assert main(["fields", str(solved), "--grid", "48,48", "--out", str(tmp_path)]) == 0
    stem = solved.name.removesuffix(".json")
    rows = list(csv.reader((tmp_path / f"{stem}_field.csv").open()))
    assert len(rows) == 1 + 48 * 48
    stag = json.loads((tmp_path / f"{stem}_stagnation.json").read_text())
    assert {s["kind"] for s in stag} <= {"saddle", "centre"} and stag
    root = ET.parse(tmp_path / f"{stem}.svg").getroot()
    assert root.tag.endswith("svg")


def test_fields_shear_and_inadmissible(tmp_path):
    p = PhysParams(2.0, 0.5, 0.3)
    shear = write_solution(tmp_path / "shear.json", shear_solution(p, 0.3, 16), p)
    assert main(["fields", str(shear), "--grid", "16,16", "--out", str(tmp_path)]) == 4
    assert main(["fields", str(shear), "--grid", "32,32", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "shear_stagnation.json").read_text()) == []
    ET.parse(tmp_path / "shear.svg")
    # the interface moves with the frame: no interface speed
    still = write_solution(tmp_path / "still.json", shear_solution(p, 0.0, 16), p)
    assert main(["fields", str(still), "--out", str(tmp_path)]) == 3
    assert main(["fields", str(tmp_path / "nothing.json"), "--out", str(tmp_path)]) == 4


def test_sweep(tmp_path):
    cfg = _config(tmp_path, "e.json", {"sweep": {"k": 2, "H": [], "omega0": [0.1]}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 4
    cfg = _config(tmp_path, "w.json", {"N": 32, "continuation": {"max_points": 3},
                                       "sweep": {"k": 2, "H": [0.5], "omega0": [0.3, 0.7]}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "sweep_k2.csv").open()))
    assert [(r["H"], r["omega0"]) for r in rows] == [("0.5", "0.3"), ("0.5", "0.7")]
    ET.parse(tmp_path / "sweep_k2.svg")


def test_branch_resume_matches_uninterrupted(tmp_path, capsys):
    full_dir, part_dir = tmp_path / "full", tmp_path / "part"
    full = _config(tmp_path, "f.json", {**BASE, "N": 32, "A0": 0.02, "continuation": {"max_points": 6}})
    part = _config(tmp_path, "p.json", {**BASE, "N": 32, "A0": 0.02, "continuation": {"max_points": 4}})
    assert main(["branch", "--config", full, "--out", str(full_dir)]) == 0
    assert main(["branch", "--config", part, "--out", str(part_dir)]) == 0
    (branch_file,) = part_dir.glob("branch_*.jsonl")
    # cut the last record in half, as a crash mid-write would
    text = branch_file.read_text()
    last = text.rstrip("\n").rfind("\n")
    branch_file.write_text(text[: last + 1 + (len(text) - last) // 2])
    capsys.readouterr()
    assert main(["branch", "--resume", str(branch_file), "--config", full, "--out", str(part_dir)]) == 0
    resumed = capsys.readouterr().out
    summary = [f.name for f in full_dir.glob("*_summary.csv")][0]
    assert (full_dir / summary).read_text() == (part_dir / summary).read_text()
    assert "stop: max_points" in resumed
    assert main(["branch", "--resume", str(tmp_path / "absent.jsonl"), "--out", str(part_dir)]) == 4


def test_output_directory_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TWOLAYER_OUT", str(tmp_path / "env"))
    cfg = _config(tmp_path, "s.json", {**BASE, "A": 0, "N": 16})
    assert main(["solve", "--config", cfg]) == 0
    assert list((tmp_path / "env").glob("solution_*.json"))
