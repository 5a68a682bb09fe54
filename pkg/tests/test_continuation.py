import json
import math
from dataclasses import replace

import numpy as np
import pytest

from twolayer import PhysParams, amplitude, critical_speed
from twolayer.continuation import (Branch, BranchPoint, ContinuationPolicy, PointDiagnostics,
                                   StepState, classify_termination, continue_to_amplitude,
                                   extend_branch, load_branch, run_cell, start_branch, sweep)
from twolayer.errors import InsufficientEvidence
from twolayer.io import BranchFile
from twolayer.residual import ClosureSpec, ResidualSystem, admissibility

P = PhysParams(2.0, 0.5, 0.3)
POLICY = ContinuationPolicy(max_points=6)


def test_policy_roundtrip_and_start():
    assert ContinuationPolicy.from_dict(POLICY.to_dict()) == POLICY
    b = start_branch(P, 0.01, 64, POLICY)
    assert len(b.points) == 1
    sol = b.last
    assert amplitude(sol) == pytest.approx(0.01, abs=1e-13)
    assert b.points[0].diagnostics.final_residual < 1e-10
    assert abs(sol.u_hat[0] - critical_speed(P)) <= 5e-4


def test_extend_respects_amplitude_targets():
    b = start_branch(P, 0.02, 32, POLICY)
    extend_branch(b, POLICY)
    assert b.stop_reason == "max_points" and len(b.points) == 6
    amps = b.amplitudes
    for prev, pt in zip(b.points, b.points[1:]):
        d = pt.diagnostics
        assert d.final_residual <= POLICY.newton.tol_residual
        if d.closure == "amplitude":
            assert d.amplitude - prev.diagnostics.amplitude == pytest.approx(d.step, abs=1e-12)
    assert np.all(np.diff(amps) > 0)
    for pt in b.points:
        assert admissibility(pt.solution, P).ok


def test_target_stop_and_continue_to_amplitude():
    sol = continue_to_amplitude(P, 0.1, 32)
    assert amplitude(sol) == pytest.approx(0.1, abs=1e-12)
    rep = ResidualSystem(P, sol.N, ClosureSpec.amplitude_target(0.1)).report(sol)
    assert rep.max_abs <= 1e-10


def test_resume_is_deterministic(tmp_path):
    full = start_branch(P, 0.02, 32, POLICY, tmp_path / "full.jsonl")
    extend_branch(full, POLICY)
    part = start_branch(P, 0.02, 32, replace(POLICY, max_points=4), tmp_path / "part.jsonl")
    extend_branch(part)
    assert len(part.points) == 4
    # simulate a crash mid-write
    with open(tmp_path / "part.jsonl", "a") as fh:
        fh.write('{"kind": "point", "solution": {"N": 3')
    resumed = load_branch(tmp_path / "part.jsonl")
    extend_branch(resumed, POLICY)
    assert len(resumed.points) == len(full.points)
    for a, b in zip(resumed.points, full.points):
        assert a.solution == b.solution
        assert a.diagnostics.amplitude == b.diagnostics.amplitude
    # the file is clean and reloads to the same branch
    again = load_branch(tmp_path / "part.jsonl")
    assert [p.solution for p in again.points] == [p.solution for p in full.points]
    header, records = BranchFile(tmp_path / "part.jsonl").read()
    assert header["params"] == {"k": 2.0, "H": 0.5, "omega0": 0.3}


def test_load_rejects_bad_points(tmp_path):
    b = start_branch(P, 0.02, 32, POLICY, tmp_path / "b.jsonl")
    extend_branch(b, max_new_points=1)
    lines = (tmp_path / "b.jsonl").read_text().splitlines()
    assert len(load_branch(tmp_path / "b.jsonl").points) == 2
    # a stored point that no longer solves the system
    recs = [json.loads(line) for line in lines]
    pt = next(r for r in recs if r.get("kind") == "point")
    pt["solution"]["L"] *= 1.001
    (tmp_path / "bad.jsonl").write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    with pytest.raises(ValueError, match="residual"):
        load_branch(tmp_path / "bad.jsonl")
    # corruption before the last line is not a torn write
    (tmp_path / "corrupt.jsonl").write_text(lines[0] + "\nnot json\n" + lines[1] + "\n")
    with pytest.raises(ValueError):
        load_branch(tmp_path / "corrupt.jsonl")


def _synthetic(speeds, uppers, lowers=None, stag_x=0.0, stop=None):
    base = start_branch(P, 0.01, 16, POLICY).last
    pts = []
    n = len(speeds)
    lowers = lowers if lowers is not None else [0.4] * n
    for i in range(n):
        d = PointDiagnostics(amplitude=0.01 * (i + 1), L=base.L, N=16, min_interface_speed=speeds[i],
                             min_speed_x=stag_x, lower_clearance=lowers[i], upper_clearance=uppers[i],
                             decay_metric=1e-12, iterations=3, final_residual=1e-12, jacobian_builds=1,
                             closure="amplitude", step=0.01, stagnation_distance=speeds[i],
                             stagnation_x=stag_x)
        pts.append(BranchPoint(base, d, StepState()))
    return Branch(P, POLICY, pts, stop_reason=stop)


def test_classification_rules():
    falling = [0.4, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01]
    steady = [0.4] * 7
    assert classify_termination(_synthetic(falling, steady)).verdict == "TypeI_crest"
    trough = _synthetic(falling, steady, stag_x=math.pi / P.k)
    assert classify_termination(trough).verdict == "TypeI_trough"
    assert classify_termination(_synthetic(steady, falling)).verdict == "TypeII_upper"
    assert classify_termination(_synthetic(steady, steady, falling)).verdict == "TypeII_lower"
    # both collapse to the same depth below their floors
    tie = [0.4 * v for v in falling]
    assert classify_termination(_synthetic(falling, tie)).verdict == "Undetermined"
    assert classify_termination(_synthetic(falling, falling)).verdict == "TypeI_crest"
    assert classify_termination(_synthetic(steady, steady)).verdict == "Undetermined"
    capped = _synthetic(steady, steady, stop="resolution_limit")
    assert classify_termination(capped).verdict == "ResolutionLimit"
    # wall gap far deeper below its floor than the speed: wall wins
    slow = [0.4, 0.3, 0.2, 0.1, 0.08, 0.06, 0.045]
    rep = classify_termination(_synthetic(slow, falling))
    assert rep.verdict == "TypeII_upper"
    assert len(rep.evidence["min_interface_speed"]) >= 3
    with pytest.raises(InsufficientEvidence):
        classify_termination(_synthetic(falling[:2], steady[:2]))


def test_sweep_cells_are_independent(tmp_path):
    pol = ContinuationPolicy(max_points=3)
    cells = sweep(2.0, [0.5], [0.3, 0.2], pol, workers=2, out_dir=tmp_path)
    assert [(c.H, c.omega0) for c in cells] == [(0.5, 0.3), (0.5, 0.2)]
    assert all(c.points == 3 for c in cells)
    single = run_cell(2.0, 0.5, 0.3, pol)
    assert single.max_amplitude == cells[0].max_amplitude
    # a failing cell is reported, not raised
    bad = run_cell(2.0, 0.5, 0.3, replace(pol, max_N=8), N0=16)
    assert bad.verdict in ("Undetermined", "ResolutionLimit")
