"""Delay-Doppler frames, the ISFFT/SFFT pair and vector layouts.

Conventions
-----------
* ``x[k, l]``: Doppler index ``k`` (rows, N), delay index ``l`` (columns, M).
* The forward ISFFT is unnormalised; the SFFT carries the 1/(NM) factor.
* Vectorisation is Doppler-major: element ``k*M + l`` holds ``x[k, l]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, LengthMismatch, UnsupportedConstellation
from .params import SystemConfig

_HEADER = struct.Struct("<4sIII")
FLAG_DD = 0
FLAG_TF = 1


@dataclass(frozen=True)
class DDFrame:
    x: np.ndarray
    constellation: int = 4

    @property
    def shape(self):
        return self.x.shape


@dataclass(frozen=True)
class TFGrid:
    X: np.ndarray


def qam_alphabet(order: int) -> np.ndarray:
    """Square QAM points with unit average energy."""
    if order not in (4, 16, 64):
        raise UnsupportedConstellation(f"QAM order {order} not in (4, 16, 64)")
    side = int(round(np.sqrt(order)))
    levels = np.arange(-side + 1, side, 2, dtype=float)
    pts = (levels[:, None] + 1j * levels[None, :]).reshape(-1)
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def gen_dd_frame(cfg: SystemConfig, qam_order: int | None = None, seed=0) -> DDFrame:
    """Draw N*M i.i.d. uniform QAM symbols scaled to energy ``P_avg / N_a``.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    order = cfg.qam_order if qam_order is None else qam_order
    alphabet = qam_alphabet(order) * np.sqrt(cfg.P_avg / cfg.N_a)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, order, size=(cfg.N, cfg.M))
    return DDFrame(alphabet[idx], order)


def isfft(f: DDFrame) -> TFGrid:
    x = np.asarray(f.x)
    N = x.shape[0]
    # sum_k e^{+j2pi nk/N} along Doppler, sum_l e^{-j2pi ml/M} along delay
    X = np.fft.fft(np.fft.ifft(x, axis=0) * N, axis=1)
    return TFGrid(X)


def sfft(g: TFGrid, constellation: int = 4) -> DDFrame:
    Y = np.asarray(g.X)
    N = Y.shape[0]
    y = np.fft.ifft(np.fft.fft(Y, axis=0), axis=1) / N
    return DDFrame(y, constellation)


def vectorize(f: DDFrame) -> np.ndarray:
    return np.asarray(f.x).reshape(-1)


def devectorize(vec: np.ndarray, N: int, M: int, constellation: int = 4) -> DDFrame:
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.size != N * M:
        raise LengthMismatch(f"expected a length-{N * M} vector, got shape {vec.shape}")
    return DDFrame(vec.reshape(N, M), constellation)


# -- binary dumps ------------------------------------------------------------

def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c16").tobytes()


def encode_grid(a: np.ndarray, flags: int) -> bytes:
    a = np.asarray(a)
    N, M = a.shape
    return _HEADER.pack(b"OTFS", N, M, flags) + _complex_bytes(a)


def decode_grid(buf: bytes) -> tuple[np.ndarray, int]:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, N, M, flags = _HEADER.unpack_from(buf)
    if magic != b"OTFS":
        raise FormatError(f"bad magic {magic!r}, expected b'OTFS'")
    payload = buf[_HEADER.size:]
    if len(payload) != 16 * N * M:
        raise FormatError(f"payload is {len(payload)} bytes, expected {16 * N * M}")
    a = np.frombuffer(payload, dtype="<c16").astype(complex).reshape(N, M)
    return a, flags


def save_frame(f: DDFrame | TFGrid, path) -> None:
    if isinstance(f, DDFrame):
        data = encode_grid(f.x, FLAG_DD | (f.constellation << 8))
    else:
        data = encode_grid(f.X, FLAG_TF)
    with open(path, "wb") as fh:
        fh.write(data)


def load_frame(path) -> DDFrame | TFGrid:
    with open(path, "rb") as fh:
        a, flags = decode_grid(fh.read())
    if flags & FLAG_TF:
        return TFGrid(a)
    return DDFrame(a, (flags >> 8) & 0xFF or 4)
