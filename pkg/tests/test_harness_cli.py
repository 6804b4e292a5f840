import json
import math
from dataclasses import replace

import numpy as np
import pytest

from dpassivity.case import DATA_DIR, case_to_dict, fixture_path
from dpassivity.cli import main
from dpassivity.harness import (CODE_ERROR, CODE_NOT_CERTIFIED, CODE_OK, BoundarySpec,
                                PipelineError, SweepAxis, SweepSpec, analyze, apply_edits,
                                boundary, boundary_at, resolve_path, scale_load, sweep,
                                write_sweep_csv)
from dpassivity.network import operating_point
from dpassivity.sim import GroundFault, Scenario, simulate

THREE = str(fixture_path("three_bus.json"))
CROSS = str(fixture_path("three_bus_cross.json"))
TIGHT = str(fixture_path("three_bus_tight.json"))
LOSSLESS = str(fixture_path("three_bus_lossless.json"))
WEAK = str(fixture_path("three_bus_weak.json"))
M118 = ["--case", str(DATA_DIR / "case118.m"), "--format", "matpower",
        "--devices", str(DATA_DIR / "case118_devices.json")]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------------------
# analyze


def test_analyze_three_verdict_lines(capsys):
    code, out, _ = run(capsys, "analyze", "--case", CROSS)
    assert code == 0
    lines = out.splitlines()
    verdicts = [l for l in lines if l.split(":")[0] in
                ("semi-distributed", "fully-distributed", "eigen-oracle")]
    assert len(verdicts) == 3
    assert "sigma_net = -2.6769" in out


def test_analyze_fully_margin_below_semi(three_bus_cross):
    rep = analyze(three_bus_cross)
    assert rep.fully.margin < rep.semi.margin


def test_analyze_case_p(capsys):
    code, out, _ = run(capsys, "analyze", "--case", THREE, "--json")
    assert code == 0
    doc = json.loads(out)
    v = doc["verdicts"]
    assert v["fully_distributed"]["status"] == "not-certified"
    assert v["semi_distributed"]["status"] == "certified"
    assert v["eigen_oracle"]["status"] == "stable"
    assert doc["sigma_net"] == pytest.approx(-2.6769, abs=1e-4)


def test_analyze_invalid_case(tmp_path, capsys, three_bus):
    doc = case_to_dict(three_bus)
    doc["lines"] = doc["lines"][:1]  # bus 3 becomes isolated
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    code, _, err = run(capsys, "analyze", "--case", str(p))
    assert code == 2
    assert "stage validate" in err


def test_analyze_parse_error(tmp_path, capsys):
    p = tmp_path / "x.json"
    p.write_text("{")
    code, _, err = run(capsys, "analyze", "--case", str(p))
    assert code == 2 and "x.json:1" in err


def test_analyze_powerflow_failure(tmp_path, capsys, three_bus):
    doc = case_to_dict(scale_load(three_bus, 40.0))
    p = tmp_path / "heavy.json"
    p.write_text(json.dumps(doc))
    code, _, err = run(capsys, "analyze", "--case", str(p))
    assert code == 3 and "stage powerflow" in err


def test_analyze_invalid_odpm_exit(tmp_path, capsys, three_bus):
    spec = three_bus.devices[1]
    bad = three_bus.with_device(1, replace(spec, params=replace(spec.params, K_vomega=9.0)))
    p = tmp_path / "odpm.json"
    p.write_text(json.dumps(case_to_dict(bad)))
    code, _, err = run(capsys, "analyze", "--case", str(p))
    assert code == 2 and "stage odpm" in err and "bus 1" in err


# ---------------------------------------------------------------------------
# parameter paths


def test_resolve_path(three_bus):
    assert resolve_path(three_bus, "devices.1.params.K_I") == (1, "params", "K_I")
    assert resolve_path(three_bus, "devices.2.D1") == (2, "params", "D1")
    assert resolve_path(three_bus, "devices.2.setpoints.P_star") == (2, "setpoints", "P_star")
    assert resolve_path(three_bus, "devices.3.sigma2") == (3, "level", "sigma2")
    for bad in ("devices.9.D1", "buses.1.V", "devices.1.nope"):
        with pytest.raises(ValueError):
            resolve_path(three_bus, bad)


def test_apply_edits(three_bus):
    case, levels = apply_edits(three_bus, [("devices.1.K_I", 3.0), ("devices.2.sigma1", 2.0)])
    assert case.devices[1].params.K_I == 3.0
    assert levels == {2: {"sigma1": 2.0}}
    assert three_bus.devices[1].params.K_I != 3.0


# ---------------------------------------------------------------------------
# sweep


def test_axis_parse():
    ax = SweepAxis.parse("devices.1.sigma1:1:2:3")
    assert ax.values.tolist() == [1.0, 1.5, 2.0]
    with pytest.raises(ValueError):
        SweepAxis.parse("devices.1.sigma1:1:2:1")
    with pytest.raises(ValueError):
        SweepSpec(ax, ax, ("semi", "bogus"))


def test_sweep_two_by_two(capsys, tmp_path):
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", "--case", THREE, "--out", str(out),
                     "--axis1", "devices.1.sigma1:1.5:2.5:2", "--axis2", "devices.2.sigma1:2:3:2")
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "p1,p2,eigen,semi,fully"
    assert len(lines) == 5
    assert [l.split(",")[:2] for l in lines[1:]] == [["1.5", "2"], ["1.5", "3"],
                                                      ["2.5", "2"], ["2.5", "3"]]


def test_sweep_nesting_lossless(three_bus_tight):
    # weaken bus 3 so the voltage-level grid crosses the boundary
    qd = three_bus_tight.devices[3]
    case = three_bus_tight.with_device(3, replace(qd, params=replace(qd.params, D1=10.0, D2=10.0)))
    spec = SweepSpec(SweepAxis("devices.1.sigma2", 0.02, 1.0, 6),
                     SweepAxis("devices.2.sigma2", 0.02, 1.0, 6))
    rows = sweep(case, spec)
    assert len(rows) == 36
    for _, _, eig, semi, fully in rows:
        assert CODE_ERROR not in (eig, semi, fully)
        if fully == CODE_OK:
            assert semi == CODE_OK
        if semi == CODE_OK:
            assert eig == CODE_OK
        # lossless and no cross control: the semi criterion is tight
        assert (semi == CODE_OK) == (eig == CODE_OK)
    assert {r[3] for r in rows} == {CODE_OK, CODE_NOT_CERTIFIED}


def test_sweep_cross_gap(three_bus_cross):
    spec = SweepSpec(SweepAxis("devices.1.sigma1", 1.5, 3.5, 3),
                     SweepAxis("devices.2.sigma1", 1.5, 3.5, 3))
    rows = sweep(three_bus_cross, spec)
    semi = sum(r[3] == CODE_OK for r in rows)
    fully = sum(r[4] == CODE_OK for r in rows)
    assert fully < semi
    assert all(r[4] != CODE_OK or r[3] == CODE_OK for r in rows)


def test_sweep_point_errors_are_recorded(three_bus):
    # a zero droop level is unreachable, the point is flagged and the sweep goes on
    spec = SweepSpec(SweepAxis("devices.2.sigma1", 0.0, 2.0, 2),
                     SweepAxis("devices.3.sigma1", 2.0, 3.0, 2), ("semi",))
    rows = sweep(three_bus, spec)
    assert [r[2] for r in rows[:2]] == [CODE_ERROR, CODE_ERROR]
    assert all(r[2] != CODE_ERROR for r in rows[2:])


def test_sweep_bad_path(three_bus):
    spec = SweepSpec(SweepAxis("devices.7.sigma1", 1, 2, 2), SweepAxis("devices.1.K_I", 1, 2, 2))
    with pytest.raises(ValueError):
        sweep(three_bus, spec)


# ---------------------------------------------------------------------------
# boundary


def test_boundary_tight_equality(three_bus_tight):
    spec = BoundarySpec(1.0, 1.0, 1)
    row = boundary(three_bus_tight, spec)[0]
    assert row.note == ""
    assert row.level_semi == pytest.approx(row.level_eigen, abs=2 * spec.tol)


def test_boundary_infeasible_scale(three_bus):
    row = boundary_at(three_bus, BoundarySpec(), 40.0)
    assert math.isnan(row.level_semi) and math.isnan(row.level_eigen)
    assert row.note.startswith("powerflow")


def test_boundary_gap_nonnegative(capsys, tmp_path):
    out = tmp_path / "b.csv"
    code, _, _ = run(capsys, "boundary", "--case", THREE, "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "s,level_semi,level_eigen,note"
    assert len(lines) == 6
    for line in lines[1:]:
        s, semi, eig, note = line.split(",")
        assert note == ""
        assert float(semi) >= float(eig) - 1e-4


def test_boundary_spec_validation():
    with pytest.raises(ValueError):
        BoundarySpec(s_min=0.0)


# ---------------------------------------------------------------------------
# simulate


def test_simulate_no_disturbance(capsys):
    code, out, _ = run(capsys, "simulate", "--case", LOSSLESS, "--t-end", "2", "--json")
    summary = json.loads(out)
    assert code == 0 and summary["settled"] and summary["max_deviation"] < 1e-9


def test_simulate_fault_on_stable_decays(capsys, tmp_path):
    out = tmp_path / "f.csv"
    code, text, _ = run(capsys, "simulate", "--case", LOSSLESS, "--t-end", "20",
                        "--fault", "3:0.5:1.0", "--out", str(out), "--json")
    summary = json.loads(text)
    assert code == 0 and summary["settled"]
    rows = out.read_text().splitlines()
    assert rows[0].startswith("time,theta_1,V_1,P_1,Q_1")
    assert len(rows) == 1 + 2001


def test_simulate_fault_on_weak_grows(three_bus_weak):
    op = operating_point(three_bus_weak)
    traj = simulate(op, Scenario(60.0, 0.05, GroundFault(3, 0.5, 1.0), sample_dt=0.5))
    dth = np.abs(traj.outputs[:, :, 0] - traj.y_star[0::2]).max(axis=1)
    at = lambda t: dth[np.searchsorted(traj.times, t)]
    assert at(60.0) > 3 * at(20.0) > 0


def test_simulate_bad_flags(capsys):
    code, _, err = run(capsys, "simulate", "--case", THREE, "--perturb", "1:theta")
    assert code == 2 and "--perturb" in err
    code, _, _ = run(capsys, "simulate", "--case", THREE, "--fault", "3:0.5:5", "--t-end", "2")
    assert code == 2
    code, _, _ = run(capsys, "simulate", "--case", THREE, "--perturb", "9:theta:0.1")
    assert code == 2


# ---------------------------------------------------------------------------
# assess and powerflow


def test_assess_fully_shape(capsys):
    code, out, _ = run(capsys, "assess", "--case", THREE, "--mode", "fully")
    doc = json.loads(out)
    assert code == 0 and doc["mode"] == "fully"
    log = doc["message_log"]
    assert sum(m["to"] == "broadcast" for m in log) == 1
    assert all(isinstance(m["payload"], float) for m in log)
    assert [m["from"] for m in log[1:]] == ["device:1", "device:2", "device:3"]


def test_assess_semi_shape(capsys):
    code, out, _ = run(capsys, "assess", "--case", THREE)
    doc = json.loads(out)
    assert code == 0
    assert [np.shape(m["payload"]) for m in doc["message_log"]] == [(2, 2)] * 3


def test_assess_118(capsys):
    code, out, _ = run(capsys, "assess", *M118, "--mode", "semi")
    doc = json.loads(out)
    assert code == 0 and len(doc["device_reports"]) == 74


def test_matpower_without_devices(capsys):
    code, _, err = run(capsys, "analyze", "--case", str(DATA_DIR / "case118.m"),
                       "--format", "matpower")
    assert code == 2 and "--devices" in err


def test_powerflow_command(capsys, tmp_path):
    out = tmp_path / "pf.csv"
    code, text, _ = run(capsys, "powerflow", "--case", THREE, "--out", str(out))
    assert code == 0 and text.startswith("converged in")
    lines = out.read_text().splitlines()
    assert lines[0] == "bus,kind,V,theta,P,Q" and len(lines) == 4
    code, text, _ = run(capsys, "powerflow", "--case", THREE, "--json")
    assert json.loads(text)["residual"] < 1e-8


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "dpassivity", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for cmd in ("analyze", "sweep", "boundary", "simulate", "assess", "powerflow"):
        assert cmd in r.stdout


# ---------------------------------------------------------------------------
# known limitation


def test_semi_not_sound_with_losses_and_cross_control(case118):
    """Regression for a documented limitation of the semi-distributed check.

    With a lossy reduced network and cross-loop control the symmetrized
    criterion can certify an unstable system. Heavier generator inertia on
    the 118-bus assignment is such a case.
    """
    heavy = {b: replace(d, params=replace(d.params, M=10 * d.params.M))
             for b, d in case118.devices.items() if d.device_kind == "SG"}
    rep = analyze(replace(case118, devices={**case118.devices, **heavy}))
    assert rep.semi.certified
    assert rep.eigen.status == "unstable"
    # removing the cross gains restores soundness
    plain = {b: replace(d, params=replace(d.params, K_wv=0.0, K_vtheta=0.0, K_vomega=0.0))
             for b, d in {**case118.devices, **heavy}.items()}
    rep2 = analyze(replace(case118, devices=plain))
    assert rep2.eigen.status == "stable"


def test_determinism_serial_parallel(three_bus_cross):
    spec = SweepSpec(SweepAxis("devices.1.sigma1", 1.5, 3.5, 3),
                     SweepAxis("devices.3.sigma2", 2.0, 3.0, 2))
    a = write_sweep_csv(spec, sweep(three_bus_cross, spec, workers=1))
    b = write_sweep_csv(spec, sweep(three_bus_cross, spec, workers=2))
    assert a == b


def test_pipeline_error_carries_stage():
    e = PipelineError("kron", "singular")
    assert e.stage == "kron" and e.exit_code == 3
