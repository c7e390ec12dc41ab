"""System configuration, target ground truth and scenario validation.

Angles are radians everywhere inside the package; the JSON scenario format
stores degrees and converts at load/dump time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfig

SPEED_OF_LIGHT = 299_792_458.0


def roundtrip_params(r: float, v: float, f_c: float) -> tuple[float, float]:
    """Round-trip delay (s) and Doppler shift (Hz) of a mono-static echo."""
    tau = 2.0 * r / SPEED_OF_LIGHT
    nu = 2.0 * v * f_c / SPEED_OF_LIGHT
    return tau, nu


def uniform_beamformer(n_a: int) -> np.ndarray:
    return np.full(n_a, 1.0 / math.sqrt(n_a), dtype=complex)


@dataclass(frozen=True)
class SystemConfig:
    """OTFS frame, array and carrier parameters.

    ``f_bf`` defaults to the uniform broadside beam ``(1/sqrt(N_a)) * ones``.
    """

    N: int
    M: int
    delta_f: float
    N_a: int
    f_c: float
    f_bf: np.ndarray | None = None
    P_avg: float = 1.0
    antenna_gain_G: float = 1.0
    rcs: float = 1.0
    qam_order: int = 4

    def __post_init__(self):
        if self.f_bf is None:
            f_bf = uniform_beamformer(self.N_a)
        else:
            f_bf = np.asarray(self.f_bf, dtype=complex).reshape(-1)
        f_bf = f_bf.copy()
        f_bf.setflags(write=False)
        object.__setattr__(self, "f_bf", f_bf)

    @property
    def T(self) -> float:
        return 1.0 / self.delta_f

    @property
    def B(self) -> float:
        return self.M * self.delta_f

    @property
    def NM(self) -> int:
        return self.N * self.M

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def delay_resolution(self) -> float:
        """Delay-bin width 1/(M*delta_f) in seconds."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self) -> float:
        """Doppler-bin width 1/(N*T) in Hz."""
        return 1.0 / (self.N * self.T)

    def with_(self, **changes) -> "SystemConfig":
        values = {
            "N": self.N, "M": self.M, "delta_f": self.delta_f, "N_a": self.N_a,
            "f_c": self.f_c, "f_bf": self.f_bf, "P_avg": self.P_avg,
            "antenna_gain_G": self.antenna_gain_G, "rcs": self.rcs,
            "qam_order": self.qam_order,
        }
        if "N_a" in changes and "f_bf" not in changes:
            values["f_bf"] = None
        values.update(changes)
        return SystemConfig(**values)


@dataclass(frozen=True)
class TargetTruth:
    """Ground truth of one point target.

    ``tau``, ``nu`` and ``h_prime`` are derived from ``(r, v, h)`` and the
    carrier frequency; build instances with :meth:`make`.
    """

    r: float
    v: float
    phi: float
    h: complex
    tau: float
    nu: float
    h_prime: complex

    @classmethod
    def make(cls, r: float, v: float, phi: float, f_c: float, h: complex = 1.0) -> "TargetTruth":
        tau, nu = roundtrip_params(r, v, f_c)
        h = complex(h)
        h_prime = h * np.exp(2j * np.pi * nu * tau)
        return cls(float(r), float(v), float(phi), h, tau, nu, complex(h_prime))

    def with_gain(self, h: complex) -> "TargetTruth":
        h = complex(h)
        return TargetTruth(self.r, self.v, self.phi, h, self.tau, self.nu,
                           complex(h * np.exp(2j * np.pi * self.nu * self.tau)))


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    targets: tuple[TargetTruth, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def P(self) -> int:
        return len(self.targets)


def config_violations(cfg: SystemConfig) -> list[str]:
    out = []
    if cfg.N < 2:
        out.append(f"N: must be >= 2 (got {cfg.N})")
    if cfg.M < 2:
        out.append(f"M: must be >= 2 (got {cfg.M})")
    if cfg.N_a < 2:
        out.append(f"N_a: must be >= 2 (got {cfg.N_a})")
    if not cfg.delta_f > 0:
        out.append(f"delta_f: must be > 0 (got {cfg.delta_f})")
    elif abs(cfg.T * cfg.delta_f - 1.0) > 1e-12:
        out.append("T: T*delta_f must equal 1")
    if not cfg.f_c > 0:
        out.append(f"f_c: must be > 0 (got {cfg.f_c})")
    if cfg.f_bf.shape != (cfg.N_a,):
        out.append(f"f_bf: length must equal N_a={cfg.N_a} (got {cfg.f_bf.size})")
    elif abs(np.linalg.norm(cfg.f_bf) - 1.0) > 1e-9:
        out.append(f"f_bf: must have unit 2-norm (got {np.linalg.norm(cfg.f_bf):.6g})")
    if not cfg.P_avg > 0:
        out.append(f"P_avg: must be > 0 (got {cfg.P_avg})")
    if cfg.qam_order not in (4, 16, 64):
        out.append(f"qam_order: must be one of 4, 16, 64 (got {cfg.qam_order})")
    return out


def validate_scenario(s: Scenario) -> Scenario:
    """Return ``s`` unchanged, or raise :class:`InvalidConfig` listing every violation."""
    cfg = s.config
    violations = config_violations(cfg)
    if s.P < 1:
        violations.append("targets: at least one target is required")
    if s.P >= cfg.N_a:
        violations.append(
            f"targets: P={s.P} must be < N_a={cfg.N_a} (noise subspace would be empty)")
    frame = cfg.N * cfg.T if cfg.delta_f > 0 else math.inf
    for i, t in enumerate(s.targets):
        if t.r < 0:
            violations.append(f"targets[{i}].r: must be >= 0 (got {t.r})")
        if abs(t.phi) > math.pi / 2:
            violations.append(f"targets[{i}].phi: |phi| must be <= pi/2 (got {t.phi})")
        if not t.tau < frame:
            violations.append(f"targets[{i}].tau: {t.tau:.6g} s is not within one frame N*T={frame:.6g} s")
    if violations:
        raise InvalidConfig(violations)
    return s


# -- JSON ------------------------------------------------------------------

def config_to_dict(cfg: SystemConfig) -> dict:
    return {
        "N": cfg.N,
        "M": cfg.M,
        "delta_f_hz": cfg.delta_f,
        "N_a": cfg.N_a,
        "f_c_hz": cfg.f_c,
        "f_bf_real": cfg.f_bf.real.tolist(),
        "f_bf_imag": cfg.f_bf.imag.tolist(),
        "P_avg": cfg.P_avg,
        "antenna_gain_G": cfg.antenna_gain_G,
        "rcs": cfg.rcs,
        "qam_order": cfg.qam_order,
    }


def config_from_dict(d: dict) -> SystemConfig:
    try:
        f_bf = None
        if "f_bf_real" in d or "f_bf_imag" in d:
            re = np.asarray(d.get("f_bf_real", 0.0), dtype=float)
            im = np.asarray(d.get("f_bf_imag", 0.0), dtype=float)
            f_bf = re + 1j * im
        return SystemConfig(
            N=int(d["N"]),
            M=int(d["M"]),
            delta_f=float(d["delta_f_hz"]),
            N_a=int(d["N_a"]),
            f_c=float(d["f_c_hz"]),
            f_bf=f_bf,
            P_avg=float(d.get("P_avg", 1.0)),
            antenna_gain_G=float(d.get("antenna_gain_G", 1.0)),
            rcs=float(d.get("rcs", 1.0)),
            qam_order=int(d.get("qam_order", 4)),
        )
    except KeyError as exc:
        raise InvalidConfig([f"{exc.args[0]}: missing required key"]) from None
    except (TypeError, ValueError) as exc:
        raise InvalidConfig([f"config: {exc}"]) from None


def scenario_to_dict(s: Scenario) -> dict:
    d = config_to_dict(s.config)
    d["targets"] = [
        {
            "r_m": t.r,
            "v_mps": t.v,
            "phi_deg": math.degrees(t.phi),
            "h_real": t.h.real,
            "h_imag": t.h.imag,
        }
        for t in s.targets
    ]
    return d


def scenario_from_dict(d: dict) -> Scenario:
    cfg = config_from_dict(d)
    targets = []
    for i, t in enumerate(d.get("targets", [])):
        try:
            h = complex(float(t.get("h_real", 1.0)), float(t.get("h_imag", 0.0)))
            targets.append(TargetTruth.make(
                float(t["r_m"]), float(t["v_mps"]), math.radians(float(t["phi_deg"])), cfg.f_c, h))
        except KeyError as exc:
            raise InvalidConfig([f"targets[{i}].{exc.args[0]}: missing required key"]) from None
    return Scenario(cfg, tuple(targets))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2))


# -- reference scenarios -----------------------------------------------------

#: 150 MHz over 16 subcarriers; kept fixed when shrinking M for desk runs so
#: the 14 m target stays inside one delay period 1/delta_f.
REFERENCE_DELTA_F = 150e6 / 16


def reference_scenario(phi_deg: float = 2.0) -> Scenario:
    """Single target at 14 m closing at 60 km/h; N_a = N = M = 16, 60 GHz."""
    cfg = SystemConfig(N=16, M=16, delta_f=REFERENCE_DELTA_F, N_a=16, f_c=60e9)
    t = TargetTruth.make(14.0, 60.0 / 3.6, math.radians(phi_deg), cfg.f_c)
    return Scenario(cfg, (t,))


def desk_scenario(size: int = 8, phi_deg: float = 2.0) -> Scenario:
    """The reference scenario shrunk to N = M = N_a = ``size``."""
    cfg = SystemConfig(N=size, M=size, delta_f=REFERENCE_DELTA_F, N_a=size, f_c=60e9)
    t = TargetTruth.make(14.0, 60.0 / 3.6, math.radians(phi_deg), cfg.f_c)
    return Scenario(cfg, (t,))
