import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from otfs_radar.errors import InvalidConfig
from otfs_radar.params import (SPEED_OF_LIGHT, Scenario, SystemConfig, TargetTruth, desk_scenario,
                               load_scenario, reference_scenario, roundtrip_params, save_scenario,
                               scenario_from_dict, scenario_to_dict, uniform_beamformer,
                               validate_scenario)


def test_speed_of_light_constant():
    assert SPEED_OF_LIGHT == 299_792_458.0


def test_roundtrip_zero():
    assert roundtrip_params(0.0, 0.0, 60e9) == (0.0, 0.0)


def test_roundtrip_reference_target():
    tau, nu = roundtrip_params(14.0, 16.6667, 60e9)
    # 2 r / c and 2 v f_c / c by hand
    assert tau == pytest.approx(28.0 / 299_792_458.0, rel=1e-15)
    assert tau == pytest.approx(9.3398e-8, rel=1e-4)
    assert nu == pytest.approx(6671.3, rel=1e-4)


def test_roundtrip_half_c_is_one_second():
    tau, nu = roundtrip_params(SPEED_OF_LIGHT / 2, 0.0, 24e9)
    assert tau == 1.0 and nu == 0.0


PHYSICAL_R = st.just(0.0) | st.floats(1e-6, 1e4)
PHYSICAL_V = st.just(0.0) | st.floats(1e-6, 300) | st.floats(-300, -1e-6)


@given(r=PHYSICAL_R, v=PHYSICAL_V)
def test_roundtrip_linear(r, v):
    t1, n1 = roundtrip_params(r, v, 60e9)
    t2, n2 = roundtrip_params(2 * r, 2 * v, 60e9)
    assert t2 == 2 * t1
    assert n2 == 2 * n1


def test_config_derived_quantities():
    cfg = SystemConfig(N=16, M=8, delta_f=1e6, N_a=4, f_c=60e9)
    assert cfg.T == 1e-6
    assert cfg.B == 8e6
    assert cfg.NM == 128
    assert cfg.delay_resolution == pytest.approx(1 / 8e6)
    assert cfg.doppler_resolution == pytest.approx(1 / 16e-6)
    assert cfg.wavelength == pytest.approx(SPEED_OF_LIGHT / 60e9)


def test_default_beamformer_is_uniform_unit_norm():
    cfg = SystemConfig(N=4, M=4, delta_f=1e6, N_a=5, f_c=1e9)
    np.testing.assert_allclose(cfg.f_bf, np.ones(5) / math.sqrt(5))
    assert np.linalg.norm(uniform_beamformer(7)) == pytest.approx(1.0)


def test_reference_scenario_is_valid_and_unchanged():
    s = reference_scenario()
    assert (s.config.N_a, s.config.N, s.config.M) == (16, 16, 16)
    assert validate_scenario(s) is s


def test_p_equal_n_a_rejected():
    cfg = SystemConfig(N=4, M=4, delta_f=1e6, N_a=2, f_c=60e9)
    t = TargetTruth.make(10.0, 0.0, 0.1, cfg.f_c)
    with pytest.raises(InvalidConfig, match="P=2"):
        validate_scenario(Scenario(cfg, (t, t)))


def test_delay_beyond_frame_rejected():
    cfg = SystemConfig(N=4, M=4, delta_f=1e6, N_a=4, f_c=60e9)
    r_frame = cfg.N * cfg.T * SPEED_OF_LIGHT / 2
    t = TargetTruth.make(r_frame * 1.001, 0.0, 0.0, cfg.f_c)
    with pytest.raises(InvalidConfig, match="frame"):
        validate_scenario(Scenario(cfg, (t,)))


def test_all_violations_reported_together():
    cfg = SystemConfig(N=1, M=1, delta_f=1e6, N_a=1, f_c=60e9, qam_order=8)
    with pytest.raises(InvalidConfig) as info:
        validate_scenario(Scenario(cfg, ()))
    joined = " ".join(info.value.violations)
    for key in ("N:", "M:", "N_a:", "qam_order", "targets"):
        assert key in joined


@given(phi=st.floats(-1.5, 1.5), r=st.floats(0, 30), v=st.floats(-50, 50))
def test_validation_idempotent(phi, r, v):
    s = desk_scenario()
    s = Scenario(s.config, (TargetTruth.make(r, v, phi, s.config.f_c),))
    assert validate_scenario(validate_scenario(s)) is s


def test_h_prime_rotation():
    t = TargetTruth.make(14.0, 10.0, 0.0, 60e9, h=2.0)
    assert t.h_prime == pytest.approx(2.0 * np.exp(2j * np.pi * t.nu * t.tau))


def test_scenario_json_round_trip(tmp_path):
    s = desk_scenario(phi_deg=-12.5)
    path = tmp_path / "s.json"
    save_scenario(s, path)
    d = json.loads(path.read_text())
    assert set(d) >= {"N", "M", "delta_f_hz", "N_a", "f_c_hz", "f_bf_real", "f_bf_imag", "targets"}
    assert d["targets"][0]["phi_deg"] == pytest.approx(-12.5)
    back = load_scenario(path)
    assert back.config.N == s.config.N
    assert back.targets[0].phi == pytest.approx(s.targets[0].phi, abs=1e-15)
    assert back.targets[0].tau == pytest.approx(s.targets[0].tau, rel=1e-15)
    assert scenario_to_dict(back) == d


def test_missing_key_is_config_error():
    d = scenario_to_dict(desk_scenario())
    del d["delta_f_hz"]
    with pytest.raises(InvalidConfig, match="delta_f_hz"):
        scenario_from_dict(d)
