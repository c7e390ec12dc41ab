"""Fisher information and Cramer-Rao bounds for (A, psi, tau, nu, phi) per target.

The noiseless signal of target ``p`` at DD sample ``(n, m)`` and antenna ``t``
is ``A e^{j psi} b_t(phi) (a(phi)^H f_bf) (Psi(tau, nu) x)[n*M + m]``, i.e.
exactly the term the simulator adds, so the bound applies to the simulated
data. Derivatives in (tau, nu, phi) use central differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dd_channel import psi_matrix, reference_noise_var, spatial_signature
from .errors import SingularFisher, StepUnderflow
from .otfs_signal import DDFrame, vectorize
from .params import Scenario, SystemConfig, TargetTruth

PARAM_NAMES = ("A", "psi", "tau", "nu", "phi")
FISHER_COND_LIMIT = 1e12
QUANTIZATION_RMS = 1.0 / math.sqrt(12.0)


@dataclass(frozen=True)
class FisherMatrix:
    I: np.ndarray
    N0: float

    @property
    def P(self) -> int:
        return self.I.shape[0] // 5


@dataclass(frozen=True)
class CrlbReport:
    """Variance bounds ordered ``(A, psi, tau, nu, phi)`` per target, plus RMSE floors."""

    bounds: np.ndarray
    resolution_floor: dict

    def bound(self, name: str, p: int = 0) -> float:
        return float(self.bounds[5 * p + PARAM_NAMES.index(name)])


def theta_from_truth(t: TargetTruth) -> tuple[float, float, float, float, float]:
    return (abs(t.h_prime), float(np.angle(t.h_prime)), t.tau, t.nu, t.phi)


def _frame_vec(frame) -> np.ndarray:
    return vectorize(frame) if isinstance(frame, DDFrame) else np.asarray(frame).reshape(-1)


def signal_model_s(theta_p, cfg: SystemConfig, frame) -> np.ndarray:
    """Noiseless contribution of one target as an (N, M, N_a) tensor indexed (n, m, t)."""
    if isinstance(theta_p, TargetTruth):
        theta_p = theta_from_truth(theta_p)
    A, psi_ph, tau, nu, phi = theta_p
    dd = psi_matrix(cfg, tau, nu, check=False).psi @ _frame_vec(frame)
    sig = spatial_signature(cfg, phi)
    return (A * np.exp(1j * psi_ph)) * dd.reshape(cfg.N, cfg.M)[:, :, None] * sig[None, None, :]


def default_steps(cfg: SystemConfig) -> tuple[float, float, float]:
    return cfg.delay_resolution * 1e-4, cfg.doppler_resolution * 1e-4, 1e-6


def _central(theta, index, step, cfg, x):
    lo, hi = list(theta), list(theta)
    hi[index] += step
    lo[index] -= step
    if hi[index] - theta[index] == 0.0 or theta[index] - lo[index] == 0.0:
        raise StepUnderflow(f"step {step:g} vanishes next to {PARAM_NAMES[index]} = {theta[index]:g}")
    return (signal_model_s(hi, cfg, x) - signal_model_s(lo, cfg, x)) / (hi[index] - lo[index])


def signal_derivatives(theta_p, cfg: SystemConfig, frame, steps=None) -> np.ndarray:
    """Stacked derivatives (5, N*M*N_a) of one target's signal."""
    if isinstance(theta_p, TargetTruth):
        theta_p = theta_from_truth(theta_p)
    theta_p = [float(v) for v in theta_p]
    x = _frame_vec(frame)
    steps = default_steps(cfg) if steps is None else steps
    unit = list(theta_p)
    unit[0] = 1.0
    s_unit = signal_model_s(unit, cfg, x)
    s = theta_p[0] * s_unit
    d = [s_unit, 1j * s]
    for index, step in zip((2, 3, 4), steps):
        d.append(_central(theta_p, index, step, cfg, x))
    return np.stack([a.reshape(-1) for a in d])


def fisher(theta_all, cfg: SystemConfig, frame, N0: float, steps=None) -> FisherMatrix:
    """``I_ij = (2/N0) Re sum conj(ds/dtheta_i) ds/dtheta_j`` over (n, m, t), all targets."""
    if not N0 > 0:
        raise ValueError("N0 must be > 0")
    D = np.concatenate([signal_derivatives(th, cfg, frame, steps) for th in theta_all])
    I = (2.0 / N0) * np.real(D.conj() @ D.T)
    return FisherMatrix(0.5 * (I + I.T), float(N0))


def resolution_floors(grid) -> dict:
    """Uniform-quantisation RMSE of the final search grid."""
    if grid is None:
        return {}
    t, n, p = grid.final_steps()
    return {"tau": t * QUANTIZATION_RMS, "nu": n * QUANTIZATION_RMS, "phi": p * QUANTIZATION_RMS}


def crlb_bounds(F: FisherMatrix, grid=None) -> CrlbReport:
    I = F.I
    # parameters live on scales from 1e-9 s to 1e6 Hz; condition the
    # unit-diagonal version instead of the raw matrix
    d = np.sqrt(np.clip(np.diag(I), 0.0, None))
    if np.any(d == 0):
        null = np.zeros(len(d))
        null[np.argmin(d)] = 1.0
        raise SingularFisher("a parameter carries no information", null_direction=null)
    Ic = I / np.outer(d, d)
    w, V = np.linalg.eigh(Ic)
    if w[0] <= w[-1] / FISHER_COND_LIMIT:
        raise SingularFisher(f"Fisher matrix is singular (condition {w[-1] / max(w[0], 1e-300):.3g})",
                             null_direction=V[:, 0] / d)
    bounds = np.diag(np.linalg.inv(Ic)) / d ** 2
    return CrlbReport(bounds, resolution_floors(grid))


def scenario_fisher(scenario: Scenario, frames, snr_db: float) -> FisherMatrix:
    """Fisher matrix averaged over ``frames`` at the reference noise level for ``snr_db``."""
    cfg = scenario.config
    N0 = reference_noise_var(cfg, snr_db)
    theta = [theta_from_truth(t) for t in scenario.targets]
    frames = [frames] if isinstance(frames, DDFrame) else list(frames)
    I = sum(fisher(theta, cfg, f, N0).I for f in frames) / len(frames)
    return FisherMatrix(I, N0)


CRLB_COLUMNS = ["snr_db", "crlb_tau_s2", "crlb_nu_hz2", "crlb_phi_rad2", "floor_tau_s", "floor_nu_hz"]


def crlb_sweep(scenario: Scenario, frames, snr_list, grid=None, target: int = 0) -> list[dict]:
    """One row per SNR: variance bounds of ``target`` plus grid floors."""
    # Fisher scales as 1/N0, so one evaluation serves every SNR.
    base = scenario_fisher(scenario, frames, 0.0)
    rows = []
    for snr in snr_list:
        gain = 10.0 ** (snr / 10.0)
        rep = crlb_bounds(FisherMatrix(base.I * gain, base.N0 / gain), grid)
        floors = rep.resolution_floor
        rows.append({
            "snr_db": float(snr),
            "crlb_tau_s2": rep.bound("tau", target),
            "crlb_nu_hz2": rep.bound("nu", target),
            "crlb_phi_rad2": rep.bound("phi", target),
            "floor_tau_s": floors.get("tau", float("nan")),
            "floor_nu_hz": floors.get("nu", float("nan")),
        })
    return rows


def write_crlb_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CRLB_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in CRLB_COLUMNS])
