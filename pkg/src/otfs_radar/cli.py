"""Command-line front end: ``otfs-radar simulate|estimate|sweep|crlb``.

Angles are degrees in every file and flag; SNR ranges use ``start:step:stop``
(inclusive). Exit codes: 0 ok, 2 configuration error, 3 I/O error,
4 estimator failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .crlb import crlb_sweep, write_crlb_csv
from .dd_channel import load_rx, save_rx, simulate_rx
from .errors import EstimationError, FormatError, InvalidConfig, OtfsRadarError
from .harness import (export, grid_from_dict, parse_snr_range, resolve_threads,
                      run_sweep, sweep_spec_from_dict)
from .ml import METHODS, estimate
from .otfs_signal import DDFrame, gen_dd_frame, load_frame, save_frame
from .params import (Scenario, desk_scenario, reference_scenario, scenario_from_dict,
                     scenario_to_dict, validate_scenario)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ESTIMATION = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


# -- helpers ---------------------------------------------------------------------

def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else f"v{__version__}"


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def metadata(resolved: dict, seed) -> dict:
    return {"config_hash": config_hash(resolved), "seed": seed, "git_describe": git_describe(),
            "version": __version__}


def echo(subcommand: str, resolved: dict) -> None:
    print(json.dumps({"subcommand": subcommand, "resolved": resolved}, sort_keys=True), file=sys.stderr)


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, "ConfigNotFound", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, "InvalidConfig", f"{path}: not valid JSON ({exc})") from None
    except OSError as exc:
        raise CliError(EXIT_CONFIG, "ConfigUnreadable", f"{path}: {exc}") from None


def load_scenario_arg(args) -> Scenario:
    if args.config is not None:
        scen = scenario_from_dict(read_json(args.config))
    elif args.preset == "reference":
        scen = reference_scenario()
    elif args.preset == "desk":
        scen = desk_scenario()
    else:
        raise CliError(EXIT_CONFIG, "InvalidConfig", "one of --config or --preset is required")
    return validate_scenario(scen)


def grid_overrides(args) -> dict:
    return {"levels": args.levels, "shrink": args.shrink, "points_per_axis": args.points_per_axis,
            "phi_step_deg": args.phi_step_deg}


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, "WriteFailed", f"{path}: {exc}") from None


# -- subcommands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    scen = load_scenario_arg(args)
    snr = None if args.snr_db is None else float(args.snr_db)
    resolved = {"scenario": scenario_to_dict(scen), "snr_db": snr, "seed": args.seed}
    echo("simulate", resolved)
    frame_ss, noise_ss = np.random.SeedSequence(args.seed).spawn(2)
    frame = gen_dd_frame(scen.config, seed=frame_ss)
    rx = simulate_rx(scen, frame, snr, seed=noise_ss)
    out = Path(args.out)
    truth = [{"phi_deg": float(np.degrees(t.phi)), "tau_s": t.tau, "nu_hz": t.nu,
              "h_prime_re": t.h_prime.real, "h_prime_im": t.h_prime.imag} for t in scen.targets]
    try:
        save_rx(rx, out)
        save_frame(frame, frame_path(out, args.frame))
    except OSError as exc:
        raise CliError(EXIT_IO, "WriteFailed", f"{out}: {exc}") from None
    sidecar = {"truth": truth, "seed": args.seed, "resolved": resolved, "noise_var": rx.noise_var,
               **metadata(resolved, args.seed)}
    write_text(sidecar_path(out), json.dumps(sidecar, indent=2) + "\n")
    return EXIT_OK


def frame_path(rx_path: Path, explicit) -> Path:
    return Path(explicit) if explicit else rx_path.with_name(rx_path.name + ".frame")


def sidecar_path(rx_path: Path) -> Path:
    return rx_path.with_name(rx_path.name + ".json")


def cmd_estimate(args) -> int:
    scen = load_scenario_arg(args)
    cfg = scen.config
    P = args.targets if args.targets is not None else scen.P
    rx_path = Path(args.rx)
    try:
        rx = load_rx(rx_path)
        frame = load_frame(frame_path(rx_path, args.frame))
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, "FileNotFound", f"{exc.filename}: no such file") from None
    except FormatError as exc:
        raise CliError(EXIT_IO, "FormatError", f"{rx_path}: {exc}") from None
    except OSError as exc:
        raise CliError(EXIT_IO, "ReadFailed", str(exc)) from None
    if not isinstance(frame, DDFrame):
        raise CliError(EXIT_IO, "FormatError", "transmit frame file holds a TF grid, expected DD")
    if (rx.N, rx.M, rx.N_a) != (cfg.N, cfg.M, cfg.N_a) or frame.x.shape != (cfg.N, cfg.M):
        raise CliError(EXIT_CONFIG, "InvalidConfig",
                       f"received file is N={rx.N}, M={rx.M}, N_a={rx.N_a}; config is "
                       f"N={cfg.N}, M={cfg.M}, N_a={cfg.N_a}")
    if not 1 <= P < cfg.N_a:
        raise CliError(EXIT_CONFIG, "InvalidConfig", f"targets: P={P} must be in [1, N_a)")
    grid = grid_from_dict(cfg, grid_overrides(args))
    resolved = {"scenario": scenario_to_dict(scen), "method": args.method, "targets": P,
                "grid": grid.to_dict(), "rx": str(rx_path), "noise_var": rx.noise_var}
    echo("estimate", resolved)
    est = estimate(args.method, rx, frame, cfg, P, grid, rx.noise_var)
    d = est.to_dict()
    d.update({"grid": grid.to_dict(), **metadata(resolved, None)})
    text = json.dumps(d, indent=2) + "\n"
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    raw = read_json(args.spec)
    try:
        spec = sweep_spec_from_dict(raw).validate()
    except (KeyError, TypeError) as exc:
        raise InvalidConfig([f"sweep spec: {exc}"]) from None
    threads = resolve_threads(args.threads)
    resolved = {"scenario": scenario_to_dict(spec.scenario), "snr_db": list(spec.snr_list),
                "trials": spec.trials, "methods": list(spec.methods), "grid": spec.grid.to_dict(),
                "master_seed": spec.master_seed, "noiseless": spec.noiseless,
                "fixed_frame": spec.fixed_frame, "random_phase": spec.random_phase,
                "crlb_frames": spec.crlb_frames}
    echo("sweep", {**resolved, "threads": threads})
    table = run_sweep(spec, threads=threads)
    out = Path(args.out)
    fmt = args.format or ("json" if out.suffix == ".json" else "csv")
    try:
        export(table, out, fmt)
    except OSError as exc:
        raise CliError(EXIT_IO, "WriteFailed", f"{out}: {exc}") from None
    write_text(out.with_name(out.name + ".meta.json"),
               json.dumps({"resolved": resolved, **metadata(resolved, spec.master_seed)}, indent=2) + "\n")
    return EXIT_OK


def cmd_crlb(args) -> int:
    scen = load_scenario_arg(args)
    try:
        snrs = parse_snr_range(args.snr)
    except ValueError as exc:
        raise InvalidConfig([f"snr: {exc}"]) from None
    if not snrs:
        raise InvalidConfig(["snr: empty SNR list"])
    grid = grid_from_dict(scen.config, grid_overrides(args))
    resolved = {"scenario": scenario_to_dict(scen), "snr_db": list(snrs), "frames": args.frames,
                "seed": args.seed, "grid": grid.to_dict()}
    echo("crlb", resolved)
    frames = [gen_dd_frame(scen.config, seed=ss) for ss in np.random.SeedSequence(args.seed).spawn(args.frames)]
    rows = crlb_sweep(scen, frames, snrs, grid)
    out = Path(args.out)
    try:
        write_crlb_csv(rows, out)
    except OSError as exc:
        raise CliError(EXIT_IO, "WriteFailed", f"{out}: {exc}") from None
    write_text(out.with_name(out.name + ".meta.json"),
               json.dumps({"resolved": resolved, **metadata(resolved, args.seed)}, indent=2) + "\n")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _add_scenario(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="scenario JSON file")
    g.add_argument("--preset", choices=("reference", "desk"), help="built-in reference scenario")


def _add_grid(p):
    p.add_argument("--levels", type=int, default=2, help="refinement rounds after the coarse grid (default 2)")
    p.add_argument("--shrink", type=float, default=0.1, help="per-level step factor (default 0.1)")
    p.add_argument("--points-per-axis", type=int, default=11, help="points per axis in each refinement (default 11)")
    p.add_argument("--phi-step-deg", type=float, default=5.0, help="coarse angle step of the 3D search (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otfs-radar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: all cores; OTFS_RADAR_THREADS overrides)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a received DD vector")
    _add_scenario(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=None, help="radar SNR; omit for a noiseless run")
    p.add_argument("--out", required=True, help="received-vector file; <out>.json and <out>.frame are written alongside")
    p.add_argument("--frame", default=None, help="transmit frame path (default <out>.frame)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate (phi, tau, nu, h) from a received file")
    _add_scenario(p)
    p.add_argument("--rx", required=True, help="received-vector file")
    p.add_argument("--frame", default=None, help="transmit frame file (default <rx>.frame)")
    p.add_argument("--method", choices=sorted(METHODS), default="two-step")
    p.add_argument("--targets", type=int, default=None, help="number of targets (default: from the config)")
    p.add_argument("--out", default=None, help="EstimateSet JSON (default stdout)")
    _add_grid(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="Monte-Carlo RMSE-versus-SNR sweep")
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--out", required=True, help="output table (.csv or .json)")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--threads", type=int, default=None, dest="threads_sub",
                   help="worker cap for this sweep (OTFS_RADAR_THREADS overrides)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("crlb", help="Cramer-Rao bounds versus SNR")
    _add_scenario(p)
    p.add_argument("--snr", required=True, help="SNR list in dB: start:step:stop or comma separated; write --snr=-10:5:20 when it starts negative")
    p.add_argument("--frames", type=int, default=4, help="frames averaged into the Fisher matrix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_grid(p)
    p.set_defaults(func=cmd_crlb)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads_sub", None) is not None:
        args.threads = args.threads_sub
    try:
        return args.func(args)
    except CliError as exc:
        return fail(exc.code, exc.kind, str(exc))
    except InvalidConfig as exc:
        return fail(EXIT_CONFIG, "InvalidConfig", str(exc), violations=exc.violations)
    except EstimationError as exc:
        return fail(EXIT_ESTIMATION, type(exc).__name__, str(exc))
    except FormatError as exc:
        return fail(EXIT_IO, "FormatError", str(exc))
    except (OtfsRadarError, ValueError) as exc:
        return fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    except OSError as exc:
        return fail(EXIT_IO, type(exc).__name__, str(exc))


def fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
