"""Monte-Carlo RMSE-versus-SNR sweeps.

Every ``(snr_index, trial)`` pair derives its frame, noise and gain-phase
streams from ``SeedSequence([master_seed, snr_index, trial])``, so a sweep
produces identical numbers whatever the worker count or scheduling order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .crlb import crlb_bounds, scenario_fisher
from .dd_channel import simulate_rx
from .errors import EstimationError, LengthMismatch
from .ml import METHODS, SearchGrid, TargetEstimate, estimate
from .music import aoa_two_step
from .otfs_signal import gen_dd_frame
from .params import Scenario, validate_scenario

CSV_COLUMNS = [
    "snr_db", "method", "rmse_phi_deg", "rmse_tau_s", "rmse_nu_hz",
    "crlb_phi_deg", "crlb_tau_s", "crlb_nu_hz", "floor_tau_s", "floor_nu_hz",
    "trials", "failures",
]
_INT_COLUMNS = {"trials", "failures"}
_FIXED_FRAME_KEY = 0x4F544653


@dataclass(frozen=True)
class SweepSpec:
    scenario: Scenario
    snr_list: tuple[float, ...]
    trials: int
    methods: tuple[str, ...] = ("two-step", "sota-3d")
    grid: SearchGrid | None = None
    master_seed: int = 0
    noiseless: bool = False
    fixed_frame: bool = False
    random_phase: bool = True
    crlb_frames: int = 4

    def __post_init__(self):
        object.__setattr__(self, "snr_list", tuple(float(s) for s in self.snr_list))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.grid is None:
            object.__setattr__(self, "grid", SearchGrid.default(self.scenario.config))

    def validate(self) -> "SweepSpec":
        from .errors import InvalidConfig
        problems = []
        if self.trials < 1:
            problems.append(f"trials: must be >= 1 (got {self.trials})")
        if not self.snr_list:
            problems.append("snr_list: must be non-empty")
        elif any(b <= a for a, b in zip(self.snr_list, self.snr_list[1:])):
            problems.append("snr_list: must be strictly increasing")
        unknown = set(self.methods) - METHODS
        if unknown or not self.methods:
            problems.append(f"methods: must be a non-empty subset of {sorted(METHODS)}")
        try:
            validate_scenario(self.scenario)
        except InvalidConfig as exc:
            problems.extend(exc.violations)
        if problems:
            raise InvalidConfig(problems)
        return self


@dataclass
class RmseTable:
    rows: list[dict] = field(default_factory=list)
    stderr: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, snr_db: float, method: str) -> dict:
        for r in self.rows:
            if r["snr_db"] == snr_db and r["method"] == method:
                return r
        raise KeyError((snr_db, method))

    def stderr_of(self, snr_db: float, method: str) -> dict:
        for r, s in zip(self.rows, self.stderr):
            if r["snr_db"] == snr_db and r["method"] == method:
                return s
        raise KeyError((snr_db, method))

    def curve(self, method: str, column: str) -> list[float]:
        return [r[column] for r in self.rows if r["method"] == method]

    def to_dict(self) -> dict:
        return {"columns": CSV_COLUMNS, "rows": self.rows, "stderr": self.stderr, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "RmseTable":
        return cls([dict(r) for r in d.get("rows", [])], [dict(s) for s in d.get("stderr", [])],
                   dict(d.get("meta", {})))


# -- metrics -------------------------------------------------------------------

def wrap_deg(err: float) -> float:
    """Wrap an angle error into [-90, 90) degrees."""
    return (err + 90.0) % 180.0 - 90.0


def match_by_angle(estimates, truth):
    """Pair each truth target (in index order) with the nearest unused estimate in phi."""
    estimates = list(estimates)
    if len(estimates) != len(truth):
        raise LengthMismatch(f"{len(estimates)} estimates for {len(truth)} targets")
    free = list(range(len(estimates)))
    pairs = []
    for t in truth:
        j = min(free, key=lambda i: (abs(wrap_deg(math.degrees(estimates[i].phi_hat - t.phi))), i))
        free.remove(j)
        pairs.append((estimates[j], t))
    return pairs


def trial_errors(estimates, truth) -> list[tuple[float, float, float]]:
    """``(phi_err_deg, tau_err_s, nu_err_hz)`` per matched target."""
    return [
        (wrap_deg(math.degrees(e.phi_hat - t.phi)), e.tau_hat - t.tau, e.nu_hat - t.nu)
        for e, t in match_by_angle(estimates, truth)
    ]


def rmse(estimates, truth) -> dict:
    """Per-parameter RMSE.

    ``estimates`` is either one trial (a sequence of :class:`TargetEstimate`)
    or a sequence of trials; errors are pooled over trials and targets.
    """
    estimates = list(estimates)
    trials = [estimates] if estimates and isinstance(estimates[0], TargetEstimate) else estimates
    errs = np.array([e for tr in trials for e in trial_errors(tr, truth)], dtype=float)
    if errs.size == 0:
        return {"phi_deg": math.nan, "tau_s": math.nan, "nu_hz": math.nan}
    r = np.sqrt(np.mean(errs ** 2, axis=0))
    return {"phi_deg": float(r[0]), "tau_s": float(r[1]), "nu_hz": float(r[2])}


def rmse_stderr(errors) -> tuple[float, float]:
    """RMSE and its delta-method Monte-Carlo standard error."""
    sq = np.asarray(errors, dtype=float) ** 2
    if sq.size == 0:
        return math.nan, math.nan
    mse = sq.mean()
    r = math.sqrt(mse)
    se_mse = sq.std(ddof=1) / math.sqrt(sq.size) if sq.size > 1 else 0.0
    return r, (se_mse / (2 * r) if r > 0 else 0.0)


# -- trials --------------------------------------------------------------------

def trial_streams(master_seed: int, snr_index: int, trial: int):
    frame_ss, noise_ss, phase_ss = np.random.SeedSequence([master_seed, snr_index, trial]).spawn(3)
    return frame_ss, noise_ss, phase_ss


def trial_scenario(spec: SweepSpec, snr_index: int, trial: int):
    """Realised scenario and frame for one trial, plus its noise stream."""
    frame_ss, noise_ss, phase_ss = trial_streams(spec.master_seed, snr_index, trial)
    cfg = spec.scenario.config
    targets = spec.scenario.targets
    if spec.random_phase:
        phases = np.random.default_rng(phase_ss).uniform(0.0, 2 * np.pi, len(targets))
        targets = tuple(t.with_gain(abs(t.h) * np.exp(1j * ph)) for t, ph in zip(targets, phases))
    if spec.fixed_frame:
        frame_ss = np.random.SeedSequence([spec.master_seed, _FIXED_FRAME_KEY])
    frame = gen_dd_frame(cfg, seed=frame_ss)
    return Scenario(cfg, targets), frame, noise_ss


def run_trial(spec: SweepSpec, snr_index: int, trial: int) -> dict:
    """Errors per method for one trial, or ``None`` where the estimator failed."""
    with threadpool_limits(1):
        scen, frame, noise_ss = trial_scenario(spec, snr_index, trial)
        snr = None if spec.noiseless else spec.snr_list[snr_index]
        rx = simulate_rx(scen, frame, snr, seed=noise_ss)
        out = {}
        for method in spec.methods:
            try:
                est = estimate(method, rx, frame, scen.config, scen.P, spec.grid, rx.noise_var)
                out[method] = trial_errors(est.targets, scen.targets)
            except EstimationError:
                out[method] = None
        return out


def _run_task(args):
    spec, snr_index, trial = args
    return run_trial(spec, snr_index, trial)


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("OTFS_RADAR_THREADS")
    if env:
        threads = int(env)
    if threads is None:
        threads = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1
    return max(1, int(threads))


def _map_trials(spec: SweepSpec, tasks, threads: int):
    if threads == 1 or len(tasks) == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def _crlb_columns(spec: SweepSpec, snr: float) -> dict:
    if spec.noiseless:
        return {"crlb_phi_deg": 0.0, "crlb_tau_s": 0.0, "crlb_nu_hz": 0.0}
    with threadpool_limits(1):
        frames = [gen_dd_frame(spec.scenario.config, seed=np.random.SeedSequence([spec.master_seed, -1 % 2**32, i]))
                  for i in range(spec.crlb_frames)]
        rep = crlb_bounds(scenario_fisher(spec.scenario, frames, snr))
    P = spec.scenario.P
    mean = lambda name: float(np.mean([rep.bound(name, p) for p in range(P)]))
    return {
        "crlb_phi_deg": math.degrees(math.sqrt(mean("phi"))),
        "crlb_tau_s": math.sqrt(mean("tau")),
        "crlb_nu_hz": math.sqrt(mean("nu")),
    }


def run_sweep(spec: SweepSpec, threads: int | None = None) -> RmseTable:
    spec.validate()
    threads = resolve_threads(threads)
    tasks = [(spec, i, t) for i in range(len(spec.snr_list)) for t in range(spec.trials)]
    results = _map_trials(spec, tasks, threads)
    t_floor, n_floor, _ = (s / math.sqrt(12.0) for s in spec.grid.final_steps())
    table = RmseTable(meta={
        "master_seed": spec.master_seed,
        "trials": spec.trials,
        "methods": list(spec.methods),
        "grid": spec.grid.to_dict(),
        "noiseless": spec.noiseless,
        "fixed_frame": spec.fixed_frame,
        "version": __version__,
    })
    for i, snr in enumerate(spec.snr_list):
        chunk = results[i * spec.trials:(i + 1) * spec.trials]
        crlb_cols = _crlb_columns(spec, snr)
        for method in spec.methods:
            per = [r[method] for r in chunk]
            ok = [e for e in per if e is not None]
            errs = np.array([row for e in ok for row in e], dtype=float).reshape(-1, 3)
            stats = [rmse_stderr(errs[:, j]) for j in range(3)]
            table.rows.append({
                "snr_db": snr,
                "method": method,
                "rmse_phi_deg": stats[0][0],
                "rmse_tau_s": stats[1][0],
                "rmse_nu_hz": stats[2][0],
                **crlb_cols,
                "floor_tau_s": t_floor,
                "floor_nu_hz": n_floor,
                "trials": spec.trials,
                "failures": len(per) - len(ok),
            })
            table.stderr.append({
                "rmse_phi_deg": stats[0][1],
                "rmse_tau_s": stats[1][1],
                "rmse_nu_hz": stats[2][1],
            })
    return table


def run_aoa_sweep(scenario: Scenario, snr_list, trials: int, master_seed: int = 0) -> list[dict]:
    """Root-MUSIC angle RMSE (deg) and its standard error per SNR; no delay-Doppler search."""
    spec = SweepSpec(scenario, tuple(snr_list), trials, ("two-step",), master_seed=master_seed)
    out = []
    with threadpool_limits(1):
        for i, snr in enumerate(spec.snr_list):
            errs, failures = [], 0
            for t in range(trials):
                scen, frame, noise_ss = trial_scenario(spec, i, t)
                rx = simulate_rx(scen, frame, snr, seed=noise_ss)
                try:
                    phis = aoa_two_step(rx, scen.config, scen.P)
                except EstimationError:
                    failures += 1
                    continue
                for err, _, _ in trial_errors([TargetEstimate(p, 0.0, 0.0, 0j) for p in phis], scen.targets):
                    errs.append(err)
            r, se = rmse_stderr(errs)
            out.append({"snr_db": snr, "rmse_phi_deg": r, "se_phi_deg": se, "failures": failures})
    return out


# -- export ----------------------------------------------------------------------

def _fmt(col: str, v) -> str:
    if col == "method":
        return str(v)
    if col in _INT_COLUMNS:
        return str(int(v))
    return repr(float(v))


def table_to_csv(table: RmseTable) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in table.rows:
        lines.append(",".join(_fmt(c, r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def table_from_csv(text: str) -> RmseTable:
    reader = csv.DictReader(text.splitlines())
    rows = []
    for r in reader:
        rows.append({c: (r[c] if c == "method" else int(r[c]) if c in _INT_COLUMNS else float(r[c]))
                     for c in CSV_COLUMNS})
    return RmseTable(rows)


def export(table: RmseTable, path, format: str = "csv") -> None:
    if format == "csv":
        data = table_to_csv(table)
    elif format == "json":
        data = json.dumps(table.to_dict(), indent=2, allow_nan=True) + "\n"
    else:
        raise ValueError(f"unknown export format {format!r}")
    with open(path, "w", newline="") as fh:
        fh.write(data)


def load_table(path) -> RmseTable:
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return RmseTable.from_dict(json.loads(text))
    return table_from_csv(text)


# -- spec files -------------------------------------------------------------------

def parse_snr_range(text) -> tuple[float, ...]:
    """``"start:step:stop"`` (inclusive), a comma list, or a JSON list."""
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    text = str(text).strip()
    if ":" in text:
        start, step, stop = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("SNR step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 12) for i in range(n))
    return tuple(float(v) for v in text.split(",") if v.strip())


def grid_from_dict(cfg, d: dict | None) -> SearchGrid:
    d = d or {}
    return SearchGrid.default(cfg, levels=int(d.get("levels", 2)), shrink=float(d.get("shrink", 0.1)),
                              points_per_axis=int(d.get("points_per_axis", 11)),
                              phi_step_deg=float(d.get("phi_step_deg", 5.0)))


def sweep_spec_from_dict(d: dict) -> SweepSpec:
    from .params import scenario_from_dict
    scen = scenario_from_dict(d["scenario"])
    return SweepSpec(
        scenario=scen,
        snr_list=parse_snr_range(d["snr_db"]),
        trials=int(d.get("trials", 100)),
        methods=tuple(d.get("methods", ("two-step", "sota-3d"))),
        grid=grid_from_dict(scen.config, d.get("grid")),
        master_seed=int(d.get("master_seed", 0)),
        noiseless=bool(d.get("noiseless", False)),
        fixed_frame=bool(d.get("fixed_frame", False)),
        random_phase=bool(d.get("random_phase", True)),
        crlb_frames=int(d.get("crlb_frames", 4)),
    )
