"""Steering vectors, the delay-Doppler coupling matrix Psi, per-target channels
and received-signal synthesis.

Psi couples transmitted DD symbol ``(k', l')`` into received sample
``(k, l)`` for a target at ``(tau, nu)`` under rectangular pulses::

    Psi[k*M + l, k'*M + l'] = D_N(k' - k + nu*N*T) * D_M(l' - l + tau*M*df) / (N*M)
                              * exp(-j2pi nu l' / (M df))
                              * (exp(-j2pi (k'/N + nu*T))  if l' > l  else 1)

with the Dirichlet ratio ``D_K(a) = (1 - e^{j2pi a}) / (1 - e^{j2pi a/K})``.
Columns with ``l' > l`` wrap in from the previous block (inter-symbol
interference); ``l' <= l`` stay inside the current one.

Received vectors are antenna-major: antenna ``q`` owns samples
``[q*NM, (q+1)*NM)``.
"""

from __future__ import annotations

import cmath
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import AngleOutOfRange, DelayOutOfFrame, FormatError
from .otfs_signal import DDFrame, vectorize
from .params import Scenario, SystemConfig

# Dirichlet ratios within this distance of a pole are replaced by their limit.
_POLE_TOL = 1e-9

_RX_HEADER = struct.Struct("<4sIIIId")


@dataclass(frozen=True)
class PsiMatrix:
    psi: np.ndarray
    tau: float
    nu: float


@dataclass(frozen=True)
class ChannelMatrix:
    g: np.ndarray
    tau: float
    nu: float
    phi: float


@dataclass(frozen=True)
class RxVector:
    y: np.ndarray
    noise_var: float
    N: int
    M: int
    N_a: int


def steering(phi: float, n_a: int) -> np.ndarray:
    """ULA response with half-wavelength spacing, element n: e^{j(n-1) pi sin(phi)}."""
    if abs(phi) > math.pi / 2 + 1e-12:
        raise AngleOutOfRange(f"|phi| = {abs(phi):.6g} rad exceeds pi/2")
    return np.exp(1j * np.pi * np.sin(phi) * np.arange(n_a))


def spatial_signature(cfg: SystemConfig, phi: float) -> np.ndarray:
    """``b(phi) * (a(phi)^H f_bf)``: the N_a-vector multiplying Psi in the channel."""
    a = steering(phi, cfg.N_a)
    return a * np.vdot(a, cfg.f_bf)


def _dirichlet(a: np.ndarray, K: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    near_pole = np.abs(a / K - np.round(a / K)) < _POLE_TOL
    den = np.sin(np.pi * a / K)
    den = np.where(near_pole, 1.0, den)
    val = np.exp(1j * np.pi * a * (K - 1) / K) * np.sin(np.pi * a) / den
    return np.where(near_pole, K, val)


def _check_delay(cfg: SystemConfig, tau: float) -> None:
    if not 0.0 <= tau < cfg.N * cfg.T:
        raise DelayOutOfFrame(f"tau = {tau:.6g} s outside [0, N*T = {cfg.N * cfg.T:.6g})")


def psi_matrix(cfg: SystemConfig, tau: float, nu: float, *, check: bool = True) -> PsiMatrix:
    """Dense NM x NM coupling matrix in Doppler-major block layout.

    ``check=False`` skips the frame-span test (grid searches refine around
    the incumbent and may step slightly outside ``[0, N*T)``).
    """
    if check:
        _check_delay(cfg, tau)
    N, M = cfg.N, cfg.M
    k = np.arange(N)
    l = np.arange(M)
    dk = k[None, :] - k[:, None]  # k' - k
    dl = l[None, :] - l[:, None]  # l' - l
    a_n = _dirichlet(dk + nu * N * cfg.T, N) / N
    a_m = _dirichlet(dl + tau * M * cfg.delta_f, M) / M
    a_m = a_m * np.exp(-2j * np.pi * nu * l / (M * cfg.delta_f))[None, :]
    isi = dl > 0
    isi_phase = np.exp(-2j * np.pi * (k / N + nu * cfg.T))
    psi = np.kron(a_n, np.where(isi, 0, a_m)) + np.kron(a_n * isi_phase[None, :], np.where(isi, a_m, 0))
    return PsiMatrix(psi, float(tau), float(nu))


def channel_matrix(cfg: SystemConfig, tau: float, nu: float, phi: float, *,
                   psi: PsiMatrix | None = None, check: bool = True) -> ChannelMatrix:
    """``(b(phi) a(phi)^H f_bf) kron Psi``, shape (N_a*NM, NM)."""
    if psi is None:
        psi = psi_matrix(cfg, tau, nu, check=check)
    sig = spatial_signature(cfg, phi)
    return ChannelMatrix(np.kron(sig[:, None], psi.psi), float(tau), float(nu), float(phi))


def pathloss_gain(cfg: SystemConfig, r: float) -> float:
    """Two-way power attenuation lambda^2 rcs G^2 / ((4 pi)^3 r^4)."""
    return cfg.wavelength ** 2 * cfg.rcs * cfg.antenna_gain_G ** 2 / ((4 * np.pi) ** 3 * r ** 4)


def noise_var_from_snr(cfg: SystemConfig, r: float, snr_rad_db: float) -> float:
    """Physical noise variance giving radar SNR ``snr_rad_db`` for a target at range ``r``."""
    if not r > 0:
        raise ValueError("r must be > 0")
    snr = 10.0 ** (snr_rad_db / 10.0)
    return pathloss_gain(cfg, r) * cfg.P_avg / snr


def reference_noise_var(cfg: SystemConfig, snr_rad_db: float) -> float:
    """Noise variance for targets whose gains carry unit magnitude.

    The two-way pathloss is divided out of both signal and noise, leaving
    ``P_avg / SNR``; a broadside target under the uniform beam then sees
    per-antenna SNR equal to ``snr_rad_db``.
    """
    return cfg.P_avg / 10.0 ** (snr_rad_db / 10.0)


def noise_rng(seed, trial: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, trial)``; element i is always draw i."""
    key = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence([int(seed), int(trial)])
    return np.random.Generator(np.random.Philox(key))


def complex_awgn(rng: np.random.Generator, size: int, var: float) -> np.ndarray:
    w = rng.standard_normal((size, 2))
    return np.sqrt(var / 2.0) * (w[:, 0] + 1j * w[:, 1])


def noiseless_rx(scenario: Scenario, frame: DDFrame) -> np.ndarray:
    cfg = scenario.config
    x = vectorize(frame)
    y = np.zeros(cfg.N_a * cfg.NM, dtype=complex)
    for t in scenario.targets:
        psi = psi_matrix(cfg, t.tau, t.nu)
        y += t.h_prime * np.kron(spatial_signature(cfg, t.phi), psi.psi @ x)
    return y


def simulate_rx(scenario: Scenario, frame: DDFrame, snr_rad_db: float | None = None,
                seed=0, *, trial: int = 0, noise_var: float | None = None) -> RxVector:
    """Synthesize ``y = sum_p h'_p G_p x + w``.

    ``noise_var`` overrides the SNR-derived variance; with both left at
    ``None`` the output is noiseless.
    """
    cfg = scenario.config
    if noise_var is None:
        noise_var = 0.0 if snr_rad_db is None else reference_noise_var(cfg, snr_rad_db)
    y = noiseless_rx(scenario, frame)
    if noise_var > 0:
        y = y + complex_awgn(noise_rng(seed, trial), y.size, noise_var)
    return RxVector(y, float(noise_var), cfg.N, cfg.M, cfg.N_a)


# -- element-wise oracle ---------------------------------------------------------

def _ratio(a: float, K: int) -> complex:
    if abs(a / K - round(a / K)) < _POLE_TOL:
        return complex(K)
    return (1 - cmath.exp(2j * math.pi * a)) / (1 - cmath.exp(2j * math.pi * a / K))


def psi_element(cfg: SystemConfig, tau: float, nu: float, k: int, kp: int, l: int, lp: int) -> complex:
    """One coupling coefficient evaluated straight from the closed form."""
    N, M, T, df = cfg.N, cfg.M, cfg.T, cfg.delta_f
    val = _ratio(kp - k + nu * N * T, N) * _ratio(lp - l + tau * M * df, M) / (N * M)
    val *= cmath.exp(-2j * math.pi * nu * lp / (M * df))
    if lp > l:
        val *= cmath.exp(-2j * math.pi * (kp / N + nu * T))
    return val


def oracle_rx_dd(scenario: Scenario, frame: DDFrame) -> RxVector:
    """Noiseless received vector by the explicit quadruple sum; small sizes only."""
    cfg = scenario.config
    N, M, n_a = cfg.N, cfg.M, cfg.N_a
    x = np.asarray(frame.x)
    y = np.zeros((n_a, N, M), dtype=complex)
    for t in scenario.targets:
        a = [cmath.exp(1j * math.pi * n * math.sin(t.phi)) for n in range(n_a)]
        beam = sum(a[n].conjugate() * complex(cfg.f_bf[n]) for n in range(n_a))
        for k in range(N):
            for l in range(M):
                acc = 0j
                for kp in range(N):
                    for lp in range(M):
                        acc += x[kp, lp] * psi_element(cfg, t.tau, t.nu, k, kp, l, lp)
                for q in range(n_a):
                    y[q, k, l] += t.h_prime * a[q] * beam * acc
    return RxVector(y.reshape(-1), 0.0, N, M, n_a)


# -- binary dumps -----------------------------------------------------------------

def encode_rx(rx: RxVector) -> bytes:
    head = _RX_HEADER.pack(b"OTFR", rx.N, rx.M, 0, rx.N_a, rx.noise_var)
    return head + np.ascontiguousarray(rx.y, dtype="<c16").tobytes()


def decode_rx(buf: bytes) -> RxVector:
    if len(buf) < _RX_HEADER.size:
        raise FormatError("truncated header")
    magic, N, M, _flags, n_a, noise_var = _RX_HEADER.unpack_from(buf)
    if magic != b"OTFR":
        raise FormatError(f"bad magic {magic!r}, expected b'OTFR'")
    payload = buf[_RX_HEADER.size:]
    if len(payload) != 16 * n_a * N * M:
        raise FormatError(f"payload is {len(payload)} bytes, expected {16 * n_a * N * M}")
    y = np.frombuffer(payload, dtype="<c16").astype(complex)
    return RxVector(y, noise_var, N, M, n_a)


def save_rx(rx: RxVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_rx(rx))


def load_rx(path) -> RxVector:
    with open(path, "rb") as fh:
        return decode_rx(fh.read())
