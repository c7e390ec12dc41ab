import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import scenario_at
from otfs_radar.errors import InvalidConfig, LengthMismatch
from otfs_radar.harness import (CSV_COLUMNS, RmseTable, SweepSpec, export, load_table,
                                match_by_angle, parse_snr_range, resolve_threads, rmse,
                                rmse_stderr, run_sweep, table_from_csv, table_to_csv,
                                trial_scenario, wrap_deg)
from otfs_radar.ml import SearchGrid, TargetEstimate
from otfs_radar.params import SystemConfig, TargetTruth, desk_scenario

CFG = SystemConfig(N=4, M=4, delta_f=1e6, N_a=4, f_c=60e9)


def est_from(t, dtau=0.0, dnu=0.0, dphi=0.0):
    return TargetEstimate(t.phi + dphi, t.tau + dtau, t.nu + dnu, t.h_prime)


def aligned_spec(**kw):
    scen = scenario_at(CFG, (2, 1, 10.0))
    grid = SearchGrid.default(CFG, levels=0)
    defaults = dict(scenario=scen, snr_list=(10.0,), trials=1, grid=grid, master_seed=3)
    defaults.update(kw)
    return SweepSpec(**defaults)


def test_rmse_zero_and_single_sample():
    t = TargetTruth.make(10.0, 5.0, 0.2, 60e9)
    assert rmse([est_from(t)], [t]) == {"phi_deg": 0.0, "tau_s": 0.0, "nu_hz": 0.0}
    assert rmse([est_from(t, dtau=1e-9)], [t])["tau_s"] == pytest.approx(1e-9, rel=1e-6)


@given(e=st.floats(-1e-6, 1e-6))
def test_rmse_symmetric_pair(e):
    t = TargetTruth.make(10.0, 5.0, 0.2, 60e9)
    r = rmse([[est_from(t, dtau=e)], [est_from(t, dtau=-e)]], [t])
    assert r["tau_s"] == pytest.approx(abs(e), rel=1e-6, abs=1e-22)


def test_rmse_length_mismatch():
    t = TargetTruth.make(10.0, 5.0, 0.2, 60e9)
    with pytest.raises(LengthMismatch):
        rmse([est_from(t), est_from(t)], [t])


def test_angle_wrap_and_matching():
    assert wrap_deg(179.0) == pytest.approx(-1.0)
    assert wrap_deg(-91.0) == pytest.approx(89.0)
    a = TargetTruth.make(10.0, 0.0, math.radians(-20), 60e9)
    b = TargetTruth.make(12.0, 0.0, math.radians(30), 60e9)
    pairs = match_by_angle([est_from(b), est_from(a)], [a, b])
    assert pairs[0][1] is a and pairs[0][0].phi_hat == a.phi
    # equal distance: lower estimate index wins
    mid = TargetTruth.make(10.0, 0.0, 0.0, 60e9)
    e1 = TargetEstimate(0.1, 1.0, 0.0, 0j)
    e2 = TargetEstimate(-0.1, 2.0, 0.0, 0j)
    assert match_by_angle([e1], [mid])[0][0] is e1
    assert match_by_angle([e2, e1], [mid, mid])[0][0] is e2


def test_rmse_stderr_known_values():
    r, se = rmse_stderr([1.0, -1.0, 1.0, -1.0])
    assert r == 1.0 and se == 0.0


def test_noiseless_aligned_sweep_is_exact():
    table = run_sweep(aligned_spec(noiseless=True), threads=1)
    assert len(table.rows) == 2
    for row in table.rows:
        assert row["rmse_tau_s"] == 0.0 and row["rmse_nu_hz"] == 0.0
        assert row["rmse_phi_deg"] < 1e-6
        assert row["failures"] == 0 and row["trials"] == 1


def test_sweep_rerun_identical_csv():
    spec = aligned_spec(snr_list=(0.0, 10.0), trials=2, methods=("two-step",))
    assert table_to_csv(run_sweep(spec, 1)) == table_to_csv(run_sweep(spec, 1))


def test_thread_count_independence():
    spec = aligned_spec(snr_list=(-5.0, 5.0), trials=3, methods=("two-step",))
    assert table_to_csv(run_sweep(spec, 1)) == table_to_csv(run_sweep(spec, 2))


def test_trial_streams_are_independent_of_order():
    spec = aligned_spec(snr_list=(0.0, 5.0), trials=4)
    s1, f1, n1 = trial_scenario(spec, 1, 2)
    trial_scenario(spec, 0, 0)
    s2, f2, n2 = trial_scenario(spec, 1, 2)
    np.testing.assert_array_equal(f1.x, f2.x)
    assert s1.targets[0].h == s2.targets[0].h and abs(abs(s1.targets[0].h) - 1) < 1e-15
    _, f3, _ = trial_scenario(spec, 1, 3)
    assert not np.array_equal(f1.x, f3.x)
    fixed = aligned_spec(fixed_frame=True, trials=4)
    np.testing.assert_array_equal(trial_scenario(fixed, 0, 0)[1].x, trial_scenario(fixed, 0, 3)[1].x)


def test_spec_validation():
    with pytest.raises(InvalidConfig) as info:
        aligned_spec(snr_list=(5.0, 0.0), trials=0, methods=("bogus",)).validate()
    text = str(info.value)
    assert "trials" in text and "increasing" in text and "methods" in text


def test_rmse_not_below_half_root_crlb():
    scen = desk_scenario()
    spec = SweepSpec(scen, (0.0, 10.0), 20, ("two-step",), SearchGrid.default(scen.config, levels=2),
                     master_seed=11, crlb_frames=2)
    table = run_sweep(spec, 1)
    for row in table.rows:
        assert row["failures"] == 0
        assert row["rmse_tau_s"] >= 0.5 * row["crlb_tau_s"]
        assert row["rmse_nu_hz"] >= 0.5 * row["crlb_nu_hz"]
        assert row["rmse_phi_deg"] >= 0.5 * row["crlb_phi_deg"]
    tau = table.curve("two-step", "rmse_tau_s")
    se = [s["rmse_tau_s"] for s in table.stderr]
    assert tau[1] <= tau[0] + 2 * math.hypot(se[0], se[1])


def test_export_schema_round_trips(tmp_path):
    table = run_sweep(aligned_spec(trials=1), 1)
    csv_path = tmp_path / "t.csv"
    export(table, csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines[0].split(",")) == 12
    back = load_table(csv_path)
    assert back.rows == table.rows
    json_path = tmp_path / "t.json"
    export(table, json_path, "json")
    d1 = json.loads(json_path.read_text())
    export(load_table(json_path), tmp_path / "u.json", "json")
    assert json.loads((tmp_path / "u.json").read_text()) == d1
    with pytest.raises(ValueError):
        export(table, tmp_path / "t.xml", "xml")


def test_empty_table_header_only(tmp_path):
    export(RmseTable(), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"
    assert table_from_csv(",".join(CSV_COLUMNS) + "\n").rows == []


def test_float_formatting_is_repr():
    row = {c: 0.1 for c in CSV_COLUMNS}
    row.update(method="two-step", trials=3, failures=0, snr_db=-5.0)
    text = table_to_csv(RmseTable([row]))
    assert text.splitlines()[1].startswith("-5.0,two-step,0.1,")
    assert text.splitlines()[1].endswith(",3,0")


def test_snr_range_syntax():
    assert parse_snr_range("-10:5:20") == (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    assert parse_snr_range("0:2.5:5") == (0.0, 2.5, 5.0)
    assert parse_snr_range("1,3") == (1.0, 3.0)
    assert parse_snr_range([4, 5]) == (4.0, 5.0)
    with pytest.raises(ValueError):
        parse_snr_range("0:0:5")


def test_thread_resolution(monkeypatch):
    monkeypatch.delenv("OTFS_RADAR_THREADS", raising=False)
    assert resolve_threads(3) == 3
    monkeypatch.setenv("OTFS_RADAR_THREADS", "2")
    assert resolve_threads(5) == 2
