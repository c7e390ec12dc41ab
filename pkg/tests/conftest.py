import math

import numpy as np
import pytest

from otfs_radar.otfs_signal import gen_dd_frame
from otfs_radar.params import Scenario, SystemConfig, TargetTruth

ACCEPTANCE_LINES: list[str] = []


def small_config(N=4, M=4, N_a=2, **kw):
    return SystemConfig(N=N, M=M, delta_f=1e6, N_a=N_a, f_c=60e9, **kw)


def target_at(cfg, tau_bins, nu_bins, phi_deg, h=1.0):
    """Target placed directly by (tau, nu) in resolution bins."""
    tau = tau_bins * cfg.delay_resolution
    nu = nu_bins * cfg.doppler_resolution
    h = complex(h)
    return TargetTruth(r=tau * 299_792_458.0 / 2, v=nu * 299_792_458.0 / (2 * cfg.f_c),
                       phi=math.radians(phi_deg), h=h, tau=tau, nu=nu,
                       h_prime=h * np.exp(2j * np.pi * nu * tau))


def scenario_at(cfg, *targets):
    return Scenario(cfg, tuple(target_at(cfg, *t) for t in targets))


@pytest.fixture
def cfg4():
    return small_config()


@pytest.fixture
def frame_of():
    return lambda cfg, seed=0: gen_dd_frame(cfg, seed=seed)


@pytest.fixture
def acceptance_line():
    def record(criterion: int, passed: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance summary")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
