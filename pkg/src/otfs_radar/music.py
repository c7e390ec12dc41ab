"""Angle-of-arrival estimation from the antenna-stacked DD samples.

The received vector is reshaped so that each antenna is one row of
snapshots; the noise subspace of the sample covariance feeds either a
pseudo-spectrum scan or the Root-MUSIC polynomial.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .dd_channel import RxVector
from .errors import (EigenFailure, InsufficientRoots, LengthMismatch,
                     RootFindingFailure, SubspaceDegenerate)
from .params import SystemConfig


@dataclass(frozen=True)
class NoiseProjector:
    C: np.ndarray
    p_sources: int
    eigenvalues: np.ndarray


def unstack(y, cfg: SystemConfig) -> np.ndarray:
    """Reshape the length ``N_a*NM`` vector into an N_a x NM snapshot matrix."""
    y = y.y if isinstance(y, RxVector) else np.asarray(y)
    if y.ndim != 1 or y.size != cfg.N_a * cfg.NM:
        raise LengthMismatch(f"expected {cfg.N_a * cfg.NM} samples, got shape {y.shape}")
    return y.reshape(cfg.N_a, cfg.NM)


def restack(U: np.ndarray) -> np.ndarray:
    return np.asarray(U).reshape(-1)


def covariance(U: np.ndarray) -> np.ndarray:
    """Unnormalised sample covariance ``U U^H``."""
    U = np.asarray(U)
    if U.shape[1] < U.shape[0]:
        warnings.warn(f"only {U.shape[1]} snapshots for {U.shape[0]} antennas; covariance is rank deficient",
                      stacklevel=2)
    return U @ U.conj().T


def noise_projector(R: np.ndarray, p_sources: int) -> NoiseProjector:
    n_a = R.shape[0]
    if not 1 <= p_sources < n_a:
        raise ValueError(f"p_sources must be in [1, {n_a - 1}], got {p_sources}")
    try:
        w, V = np.linalg.eigh(R)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    w, V = w[::-1], V[:, ::-1]
    scale = max(abs(w[0]), np.finfo(float).tiny)
    if (w[p_sources - 1] - w[p_sources]) <= 1e-12 * scale:
        raise SubspaceDegenerate(
            f"eigenvalues {p_sources} and {p_sources + 1} coincide; signal/noise split is ambiguous")
    Vn = V[:, p_sources:]
    return NoiseProjector(Vn @ Vn.conj().T, p_sources, w)


def estimate_source_count(R: np.ndarray) -> int:
    """Largest ratio between consecutive (descending) eigenvalues; a heuristic only."""
    w = np.sort(np.linalg.eigvalsh(R))[::-1]
    w = np.maximum(w, np.finfo(float).tiny * max(w[0], 1.0))
    return int(np.argmax(w[:-1] / w[1:])) + 1


def _as_matrix(C) -> np.ndarray:
    return C.C if isinstance(C, NoiseProjector) else np.asarray(C)


def spectral_music(C, angle_grid, n_peaks: int | None = None):
    """Pseudo-spectrum ``1 / |a^H C a|`` over ``angle_grid`` (rad).

    Returns ``(spectrum, peak_angles)`` with local maxima sorted by height;
    ``n_peaks`` truncates the list (defaults to the projector's source count).
    """
    if n_peaks is None and isinstance(C, NoiseProjector):
        n_peaks = C.p_sources
    C = _as_matrix(C)
    grid = np.atleast_1d(np.asarray(angle_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("angle grid is empty")
    A = np.exp(1j * np.pi * np.outer(np.arange(C.shape[0]), np.sin(grid)))
    denom = np.abs(np.einsum("ia,ij,ja->a", A.conj(), C, A))
    spectrum = 1.0 / np.maximum(denom, np.finfo(float).tiny)
    idx = np.arange(grid.size)
    left = np.r_[-np.inf, spectrum[:-1]]
    right = np.r_[spectrum[1:], -np.inf]
    peaks = idx[(spectrum > left) & (spectrum >= right)]
    peaks = peaks[np.argsort(-spectrum[peaks], kind="stable")]
    if n_peaks is not None:
        peaks = peaks[:n_peaks]
    return spectrum, grid[peaks]


def music_polynomial(C) -> np.ndarray:
    """Coefficients (highest power first) of ``z^(N_a-1) D(z)``.

    ``D(z) = sum_i c_i z^i`` where ``c_i`` sums the diagonal of C with
    row - col = i, so that ``D(e^{-j pi sin phi}) = a(phi)^H C a(phi)``.
    """
    C = _as_matrix(C)
    n = C.shape[0]
    return np.array([np.trace(C, offset=-i) for i in range(n - 1, -n, -1)])


def root_music(C, p_sources: int | None = None) -> list[float]:
    """AoA estimates (rad) from the ``p_sources`` roots inside and nearest the unit circle."""
    if p_sources is None:
        p_sources = C.p_sources
    coeffs = music_polynomial(C)
    if not np.all(np.isfinite(coeffs)):
        raise RootFindingFailure("non-finite polynomial coefficients")
    try:
        roots = np.roots(coeffs)
    except np.linalg.LinAlgError as exc:
        raise RootFindingFailure(str(exc)) from exc
    mag = np.abs(roots)
    # unit-circle double roots split by ~sqrt(eps) either way
    inside = roots[mag <= 1.0 + 1e-7]
    inside = inside[np.argsort(np.abs(1.0 - np.abs(inside)), kind="stable")]
    chosen: list[complex] = []
    for z in inside:
        if any(abs(z - c) < 1e-5 for c in chosen):
            continue
        chosen.append(z)
        if len(chosen) == p_sources:
            break
    if len(chosen) < p_sources:
        raise InsufficientRoots(f"found {len(chosen)} admissible roots, need {p_sources}")
    return [float(-np.arcsin(np.clip(np.angle(z) / np.pi, -1.0, 1.0))) for z in chosen]


def aoa_two_step(y, cfg: SystemConfig, p_sources: int) -> list[float]:
    """unstack -> covariance -> noise projector -> Root-MUSIC."""
    R = covariance(unstack(y, cfg))
    return root_music(noise_projector(R, p_sources), p_sources)


def write_spectrum_csv(path, angle_grid, spectrum) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_deg", "pseudo_spectrum"])
        for a, s in zip(np.degrees(angle_grid), spectrum):
            w.writerow([repr(float(a)), repr(float(s))])
