"""Delay-Doppler / angle grid searches.

Two estimators share the grid machinery here:

* :func:`sota_ml_search` -- joint (tau, nu, phi) maximum-likelihood search
  over the full received vector, gains concentrated out per candidate.
* :func:`two_step_estimate` -- Root-MUSIC angles first, then a 2-D
  (tau, nu) search per angle on the spatially combined signal using an
  LMMSE-filtered, scale-fitted cost.

Both searches evaluate a coarse level-0 grid (M delay bins by N Doppler
bins) and then ``levels`` refinement rounds; round ``i`` uses spacing
``step0 * shrink**i`` with ``points_per_axis`` points centred on the
incumbent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dd_channel import (ChannelMatrix, PsiMatrix, RxVector, channel_matrix,
                         psi_matrix, steering)
from .errors import SingularSystem
from .music import aoa_two_step
from .otfs_signal import DDFrame, vectorize
from .params import SystemConfig

GRAM_COND_LIMIT = 1e12


@dataclass(frozen=True)
class SearchGrid:
    tau_points: np.ndarray
    nu_points: np.ndarray
    phi_points: np.ndarray
    levels: int = 2
    shrink: float = 0.1
    points_per_axis: int = 11

    @classmethod
    def default(cls, cfg: SystemConfig, levels: int = 2, shrink: float = 0.1,
                points_per_axis: int = 11, phi_step_deg: float = 5.0,
                phi_points=None) -> "SearchGrid":
        tau = np.arange(cfg.M) * cfg.delay_resolution
        nu = np.arange(cfg.N) * cfg.doppler_resolution
        if phi_points is None:
            n_phi = int(round(180.0 / phi_step_deg))
            phi_points = np.radians(np.linspace(-90.0, 90.0, n_phi + 1))
        return cls(tau, nu, np.atleast_1d(np.asarray(phi_points, dtype=float)),
                   int(levels), float(shrink), int(points_per_axis))

    @staticmethod
    def _spacing(points: np.ndarray) -> float:
        return float(points[1] - points[0]) if len(points) > 1 else 0.0

    @property
    def tau_step(self) -> float:
        return self._spacing(self.tau_points)

    @property
    def nu_step(self) -> float:
        return self._spacing(self.nu_points)

    @property
    def phi_step(self) -> float:
        return self._spacing(self.phi_points)

    def final_steps(self) -> tuple[float, float, float]:
        f = self.shrink ** self.levels
        return self.tau_step * f, self.nu_step * f, self.phi_step * f

    def offsets(self) -> np.ndarray:
        n = self.points_per_axis
        return np.arange(n) - (n - 1) / 2.0

    def with_(self, **changes) -> "SearchGrid":
        values = dict(tau_points=self.tau_points, nu_points=self.nu_points,
                      phi_points=self.phi_points, levels=self.levels,
                      shrink=self.shrink, points_per_axis=self.points_per_axis)
        values.update(changes)
        return SearchGrid(**values)

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "shrink": self.shrink,
            "points_per_axis": self.points_per_axis,
            "tau_step_s": self.tau_step,
            "nu_step_hz": self.nu_step,
            "phi_step_deg": math.degrees(self.phi_step),
            "n_tau": len(self.tau_points),
            "n_nu": len(self.nu_points),
            "n_phi": len(self.phi_points),
        }


@dataclass(frozen=True)
class TargetEstimate:
    phi_hat: float
    tau_hat: float
    nu_hat: float
    h_hat: complex
    cost_trace: tuple[float, ...] = ()


@dataclass(frozen=True)
class EstimateSet:
    targets: tuple[TargetEstimate, ...]
    method_tag: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def to_dict(self) -> dict:
        d = {
            "method": self.method_tag,
            "targets": [
                {
                    "phi_deg": math.degrees(t.phi_hat),
                    "tau_s": t.tau_hat,
                    "nu_hz": t.nu_hat,
                    "h_re": t.h_hat.real,
                    "h_im": t.h_hat.imag,
                    "cost_trace": list(t.cost_trace),
                }
                for t in self.targets
            ],
        }
        d.update(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateSet":
        targets = tuple(
            TargetEstimate(math.radians(t["phi_deg"]), t["tau_s"], t["nu_hz"],
                           complex(t["h_re"], t["h_im"]), tuple(t.get("cost_trace", ())))
            for t in d["targets"]
        )
        meta = {k: v for k, v in d.items() if k not in ("method", "targets")}
        return cls(targets, d["method"], meta)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _vec(a) -> np.ndarray:
    if isinstance(a, RxVector):
        return a.y
    if isinstance(a, DDFrame):
        return vectorize(a)
    return np.asarray(a).reshape(-1)


# -- gains --------------------------------------------------------------------

def _gains(y: np.ndarray, cols: list[np.ndarray]) -> np.ndarray:
    A = np.array([[np.vdot(cp, cq) for cq in cols] for cp in cols])
    b = np.array([np.vdot(cp, y) for cp in cols])
    if len(cols) == 1:
        if A[0, 0].real <= 0:
            raise SingularSystem("candidate channel annihilates the frame")
        return b / A[0, 0]
    if np.linalg.cond(A) > GRAM_COND_LIMIT:
        raise SingularSystem("gain Gram matrix is ill-conditioned (near-coincident targets)")
    return np.linalg.solve(A, b)


def solve_gains(y, x, channels) -> np.ndarray:
    """Least-squares gains h' solving  x^H G_p^H (sum_q h'_q G_q) x = x^H G_p^H y."""
    y, x = _vec(y), _vec(x)
    cols = [(G.g if isinstance(G, ChannelMatrix) else np.asarray(G)) @ x for G in channels]
    return _gains(y, cols)


def ml_objective(y: np.ndarray, cols: list[np.ndarray], h: np.ndarray) -> float:
    """Useful-minus-interference objective; the interference term is real-projected."""
    total = 0.0
    for p, cp in enumerate(cols):
        u = np.vdot(cp, y)
        energy = np.vdot(cp, cp).real
        interf = sum((h[q] * cols[q] for q in range(len(cols)) if q != p), np.zeros_like(y))
        v = np.vdot(cp, interf)
        total += (abs(u) ** 2 - (np.conj(u) * v).real) / energy
    return float(total)


# -- joint 3-D search ------------------------------------------------------------

def _sota_target_search(y, x, cfg, grid: SearchGrid, fixed_cols: list[np.ndarray]):
    def evaluate(taus, nus, phis):
        best = (-math.inf, None)
        for tau in taus:
            for nu in nus:
                psi = psi_matrix(cfg, tau, nu, check=False)
                for phi in phis:
                    G = channel_matrix(cfg, tau, nu, phi, psi=psi)
                    c = G.g @ x
                    cols = fixed_cols + [c]
                    try:
                        h = _gains(y, cols)
                    except SingularSystem:
                        continue
                    obj = ml_objective(y, cols, h)
                    if obj > best[0]:
                        best = (obj, (tau, nu, phi))
        return best

    best_obj, best = evaluate(grid.tau_points, grid.nu_points, grid.phi_points)
    if best is None:
        raise SingularSystem("no admissible grid cell")
    trace = [best_obj]
    steps = np.array([grid.tau_step, grid.nu_step, grid.phi_step])
    off = grid.offsets()
    for _ in range(grid.levels):
        steps = steps * grid.shrink
        phis = np.clip(best[2] + steps[2] * off, -math.pi / 2, math.pi / 2)
        phis = np.unique(phis) if steps[2] > 0 else np.array([best[2]])
        obj, cand = evaluate(best[0] + steps[0] * off, best[1] + steps[1] * off, phis)
        if cand is not None and obj > best_obj:
            best_obj, best = obj, cand
        trace.append(best_obj)
    return best, trace


def sota_ml_search(y, x, cfg: SystemConfig, P: int, grid: SearchGrid, sweeps: int = 1) -> EstimateSet:
    """Joint (tau, nu, phi) grid search maximising the concentrated ML objective.

    Targets are acquired one at a time (previous ones held fixed), then
    ``sweeps`` alternating passes re-search each target against the others.
    """
    y, x = _vec(y), _vec(x)
    params: list[tuple] = []
    traces: list[list[float]] = []

    def col(p):
        tau, nu, phi = p
        return channel_matrix(cfg, tau, nu, phi, check=False).g @ x

    for _ in range(P):
        best, trace = _sota_target_search(y, x, cfg, grid, [col(p) for p in params])
        params.append(best)
        traces.append(trace)
    if P > 1:
        for _ in range(sweeps):
            for p in range(P):
                others = [col(q) for i, q in enumerate(params) if i != p]
                params[p], traces[p] = _sota_target_search(y, x, cfg, grid, others)
    channels = [channel_matrix(cfg, *p, check=False) for p in params]
    h = solve_gains(y, x, channels)
    targets = tuple(
        TargetEstimate(float(p[2]), float(p[0]), float(p[1]), complex(hp), tuple(tr))
        for p, hp, tr in zip(params, h, traces))
    return EstimateSet(targets, "sota-3d", {"grid": grid.to_dict()})


# -- two-step -----------------------------------------------------------------------

def spatial_combine(y, phi_hat: float, cfg: SystemConfig) -> np.ndarray:
    """``(b(phi_hat) kron I_NM)^H y / N_a``: length NM."""
    y = _vec(y)
    n_a = y.size // cfg.NM
    b = steering(phi_hat, n_a)
    return (b.conj() @ y.reshape(n_a, cfg.NM)) / n_a


def lmmse_filter(psi, y_comb: np.ndarray, noise_var: float) -> np.ndarray:
    """``(Psi^H Psi + noise_var I)^{-1} Psi^H y_comb``; pseudo-inverse when noise_var is 0."""
    P = psi.psi if isinstance(psi, PsiMatrix) else np.asarray(psi)
    if noise_var > 0:
        gram = P.conj().T @ P
        gram[np.diag_indices_from(gram)] += noise_var
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), P.conj().T @ y_comb)
    return np.linalg.lstsq(P, y_comb, rcond=1e-10)[0]


def lmmse_cost(x, y_comb, psi, noise_var: float) -> float:
    """``min_alpha ||x - alpha z||^2`` with ``z`` the LMMSE-filtered combined signal.

    ``noise_var`` is the post-combining variance. Invariant to scaling
    ``y_comb`` by any nonzero constant.
    """
    x = _vec(x)
    z = lmmse_filter(psi, np.asarray(y_comb), noise_var)
    zz = np.vdot(z, z).real
    if zz == 0.0:
        return float(np.vdot(x, x).real)
    r = x - (np.vdot(z, x) / zz) * z
    return float(np.vdot(r, r).real)


def dd_search(x, y_comb, cfg: SystemConfig, noise_var: float, grid: SearchGrid):
    """Minimise :func:`lmmse_cost` over (tau, nu); returns ``(tau, nu, cost_trace)``."""
    x = _vec(x)
    y_comb = np.asarray(y_comb)

    def evaluate(taus, nus):
        best = (math.inf, None)
        for tau in taus:
            for nu in nus:
                c = lmmse_cost(x, y_comb, psi_matrix(cfg, tau, nu, check=False), noise_var)
                if c < best[0]:
                    best = (c, (tau, nu))
        return best

    best_cost, best = evaluate(grid.tau_points, grid.nu_points)
    trace = [best_cost]
    t_step, n_step = grid.tau_step, grid.nu_step
    off = grid.offsets()
    for _ in range(grid.levels):
        t_step *= grid.shrink
        n_step *= grid.shrink
        c, cand = evaluate(best[0] + t_step * off, best[1] + n_step * off)
        if c < best_cost:
            best_cost, best = c, cand
        trace.append(best_cost)
    return float(best[0]), float(best[1]), trace


def two_step_estimate(y, x, cfg: SystemConfig, P: int, grid: SearchGrid, sigma_w2: float) -> EstimateSet:
    """Root-MUSIC angles, then one LMMSE delay-Doppler search per angle, then joint gains."""
    y, x = _vec(y), _vec(x)
    phis = aoa_two_step(y, cfg, P)
    noise_comb = sigma_w2 / cfg.N_a
    found = []
    for phi in phis:
        tau, nu, trace = dd_search(x, spatial_combine(y, phi, cfg), cfg, noise_comb, grid)
        found.append((tau, nu, phi, trace))
    channels = [channel_matrix(cfg, tau, nu, phi, check=False) for tau, nu, phi, _ in found]
    h = solve_gains(y, x, channels)
    targets = tuple(
        TargetEstimate(float(phi), tau, nu, complex(hp), tuple(trace))
        for (tau, nu, phi, trace), hp in zip(found, h))
    return EstimateSet(targets, "two-step", {"grid": grid.to_dict()})


METHODS = {"two-step", "sota-3d"}


def estimate(method: str, y, x, cfg: SystemConfig, P: int, grid: SearchGrid, sigma_w2: float) -> EstimateSet:
    if method == "two-step":
        return two_step_estimate(y, x, cfg, P, grid, sigma_w2)
    if method == "sota-3d":
        return sota_ml_search(y, x, cfg, P, grid)
    raise ValueError(f"unknown method {method!r}")
