import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scenario_at, small_config
from otfs_radar.crlb import (CRLB_COLUMNS, FisherMatrix, crlb_bounds, crlb_sweep, fisher,
                             resolution_floors, scenario_fisher, signal_derivatives,
                             signal_model_s, theta_from_truth, write_crlb_csv)
from otfs_radar.dd_channel import noiseless_rx
from otfs_radar.errors import SingularFisher, StepUnderflow
from otfs_radar.ml import SearchGrid
from otfs_radar.otfs_signal import gen_dd_frame
from otfs_radar.params import desk_scenario

CFG = small_config(N=4, M=4, N_a=4)
FRAME = gen_dd_frame(CFG, seed=5)
THETA = (0.9, 0.4, 1.3 * CFG.delay_resolution, 0.8 * CFG.doppler_resolution, math.radians(12.0))


def test_amplitude_and_phase_factors():
    assert not np.any(signal_model_s((0.0,) + THETA[1:], CFG, FRAME))
    s = signal_model_s(THETA, CFG, FRAME)
    flipped = signal_model_s((THETA[0], THETA[1] + math.pi) + THETA[2:], CFG, FRAME)
    np.testing.assert_allclose(flipped, -s, atol=1e-14)


def test_static_broadside_collapse():
    s = signal_model_s((0.7, 0.3, 0.0, 0.0, 0.0), CFG, FRAME)
    assert s.shape == (4, 4, 4)
    scale = 0.7 * np.exp(0.3j) * np.sum(CFG.f_bf)
    for t in range(4):
        np.testing.assert_allclose(s[:, :, t], scale * FRAME.x, atol=1e-14)


def test_signal_model_matches_simulator():
    scen = scenario_at(CFG, (1.3, 0.8, 12.0, 0.9 * np.exp(0.4j)))
    s = signal_model_s(scen.targets[0], CFG, FRAME)
    y = noiseless_rx(scen, FRAME).reshape(4, 16)
    np.testing.assert_allclose(np.moveaxis(s, 2, 0).reshape(4, 16), y, atol=1e-13)


def test_fisher_symmetric_psd_and_n0_scaling():
    F = fisher([THETA], CFG, FRAME, N0=0.3)
    np.testing.assert_allclose(F.I, F.I.T)
    d = np.sqrt(np.diag(F.I))
    assert np.min(np.linalg.eigvalsh(F.I / np.outer(d, d))) > -1e-12
    F2 = fisher([THETA], CFG, FRAME, N0=0.6)
    np.testing.assert_allclose(F2.I, F.I / 2, rtol=1e-12)


def test_amplitude_phase_block_decoupled():
    D = signal_derivatives(THETA, CFG, FRAME)
    cross = np.sum(np.conj(D[0]) * D[1])
    assert abs(cross.real) < 1e-12 * np.sum(np.abs(D[0]) ** 2)


def test_tau_step_convergence():
    base = list(fisher([THETA], CFG, FRAME, 1.0).I.diagonal())
    steps = (CFG.delay_resolution * 5e-5, CFG.doppler_resolution * 1e-4, 1e-6)
    half = fisher([THETA], CFG, FRAME, 1.0, steps=steps).I[2, 2]
    assert abs(half - base[2]) < 1e-3 * base[2]


def test_richardson_second_order():
    h = 0.05 * CFG.delay_resolution
    d = [signal_derivatives(THETA, CFG, FRAME, steps=(h / 2 ** i, 1.0, 1e-6))[2] for i in range(3)]
    ratio = np.linalg.norm(d[0] - d[1]) / np.linalg.norm(d[1] - d[2])
    assert ratio == pytest.approx(4.0, rel=0.2)


def test_step_underflow():
    with pytest.raises(StepUnderflow):
        signal_derivatives((1.0, 0.0, 1.0, 0.0, 0.0), CFG, FRAME, steps=(1e-30, 1.0, 1e-6))


def test_bounds_nonnegative_and_floors():
    rep = crlb_bounds(fisher([THETA], CFG, FRAME, 0.1), SearchGrid.default(CFG, levels=1))
    assert np.all(rep.bounds >= 0)
    g1 = SearchGrid.default(CFG, levels=1)
    g2 = g1.with_(tau_points=g1.tau_points * 2)
    assert resolution_floors(g2)["tau"] == pytest.approx(2 * resolution_floors(g1)["tau"])
    assert rep.resolution_floor["tau"] == pytest.approx(g1.final_steps()[0] / math.sqrt(12))


def test_singular_fisher_reports_direction():
    F = fisher([THETA], CFG, FRAME, 1.0)
    I = F.I.copy()
    I[4, :] = I[3, :] * 2
    I[:, 4] = I[:, 3] * 2
    I[4, 4] = 4 * I[3, 3]
    with pytest.raises(SingularFisher) as info:
        crlb_bounds(FisherMatrix(I, 1.0))
    assert info.value.null_direction.shape == (5,)


def test_crlb_slope_minus_one():
    scen = desk_scenario()
    frames = [gen_dd_frame(scen.config, seed=i) for i in range(2)]
    snrs = np.array([-10.0, -5.0, 0.0, 5.0, 10.0])
    taus = [crlb_bounds(scenario_fisher(scen, frames, s)).bound("tau") for s in snrs]
    slope = np.polyfit(snrs / 10, np.log10(taus), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.05)


@settings(max_examples=10, deadline=None)
@given(phi=st.floats(-60, 60), tb=st.floats(0.1, 3.5))
def test_bounds_positive_property(phi, tb):
    theta = (1.0, 0.0, tb * CFG.delay_resolution, 0.3 * CFG.doppler_resolution, math.radians(phi))
    try:
        rep = crlb_bounds(fisher([theta], CFG, FRAME, 1.0))
    except SingularFisher:
        return
    assert np.all(rep.bounds > 0)


def test_sweep_rows_and_csv(tmp_path):
    scen = desk_scenario()
    rows = crlb_sweep(scen, [gen_dd_frame(scen.config, seed=0)], [0.0, 10.0, 20.0],
                      SearchGrid.default(scen.config))
    taus = [r["crlb_tau_s2"] for r in rows]
    assert taus[0] > taus[1] > taus[2]
    path = tmp_path / "c.csv"
    write_crlb_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CRLB_COLUMNS) and len(lines) == 4
    assert theta_from_truth(scen.targets[0])[2] == scen.targets[0].tau
