"""F0 extraction (YIN), statistics, distribution shifting and quantization."""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .audio_io import Waveform, num_frames
from .errors import (ConfigError, ContractError, DegenerateStatsError,
                     EmptyInputError, NoVoicedFramesError)

F0_MAGIC = b"F0C1"


@dataclass
class F0Contour:
    f0_hz: np.ndarray
    hop_seconds: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        if np.any(~np.isfinite(self.f0_hz)) or np.any(self.f0_hz < 0):
            raise ContractError("F0 values must be finite and non-negative")

    @property
    def voiced(self) -> np.ndarray:
        return self.f0_hz > 0

    def __len__(self) -> int:
        return self.f0_hz.shape[0]


@dataclass(frozen=True)
class F0Stats:
    mean_logf0: float
    std_logf0: float
    mean_hz: float = float("nan")
    std_hz: float = float("nan")
    count: int = 0

    def to_dict(self) -> dict:
        return {"mean_logf0": self.mean_logf0, "std_logf0": self.std_logf0,
                "mean_hz": self.mean_hz, "std_hz": self.std_hz, "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "F0Stats":
        return cls(float(d["mean_logf0"]), float(d["std_logf0"]), float(d.get("mean_hz", "nan")),
                   float(d.get("std_hz", "nan")), int(d.get("count", 0)))


@dataclass
class QuantizedF0:
    bins: np.ndarray
    num_bins: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.int64).reshape(-1)
        if self.bins.size and (self.bins.min() < 0 or self.bins.max() >= self.num_bins):
            raise ContractError(f"quantized F0 outside [0, {self.num_bins - 1}]")


# ---------------------------------------------------------------- extraction

_EXTRACTORS: dict[str, Callable[..., F0Contour]] = {}


def register_f0_extractor(name: str, fn: Callable[..., F0Contour]) -> None:
    """Plug in an alternative extractor, e.g. an external PYIN binding.

    ``fn(w, fmin, fmax, hop_length)`` must return an :class:`F0Contour` on the
    center-padded frame grid.
    """
    _EXTRACTORS[name] = fn


def _frame_signal(x: np.ndarray, frame_len: int, hop: int, n_frames: int, offset: int) -> np.ndarray:
    pad_left = max(0, -offset)
    need = offset + (n_frames - 1) * hop + frame_len
    padded = np.pad(x, (pad_left, max(0, need - len(x))))
    start = offset + pad_left
    idx = start + np.arange(n_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    return padded[idx]


def yin_cmnd(frames: np.ndarray, window: int, tau_max: int) -> np.ndarray:
    """Cumulative-mean-normalised difference for each row of ``frames``.

    Rows must hold ``window + tau_max`` samples; the result has ``tau_max + 1``
    columns, column 0 being 1 by convention.
    """
    n = frames.shape[1]
    size = 1 << int(math.ceil(math.log2(n + window)))
    spec_full = np.fft.rfft(frames, size, axis=1)
    spec_win = np.fft.rfft(frames[:, :window], size, axis=1)
    # r[tau] = sum_{j<W} x_j x_{j+tau}
    corr = np.fft.irfft(spec_full * np.conj(spec_win), size, axis=1)[:, :tau_max + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    energy0 = sq[:, window][:, None]
    energy_tau = sq[:, taus + window] - sq[:, taus]
    diff = np.maximum(energy0 + energy_tau - 2 * corr, 0.0)
    diff[:, 0] = 0.0
    cum = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = diff[:, 1:] * taus[1:] / cum
    cmnd = np.where(cum > 1e-12 * window, cmnd, 1.0)
    return np.concatenate([np.ones((frames.shape[0], 1)), cmnd], axis=1)


def _parabolic(y: np.ndarray, i: int) -> float:
    if i <= 0 or i >= len(y) - 1:
        return float(i)
    a, b, c = y[i - 1], y[i], y[i + 1]
    denom = a - 2 * b + c
    if abs(denom) < 1e-12:
        return float(i)
    return i + 0.5 * (a - c) / denom


def yin(w: Waveform, fmin: float = 50.0, fmax: float = 1100.0, hop_length: int = 240,
        threshold: float = 0.15) -> F0Contour:
    sr = w.sample_rate
    tau_min = max(2, int(math.floor(sr / fmax)))
    tau_max = int(math.ceil(sr / fmin))
    window = tau_max + tau_max % 2
    T = num_frames(len(w), hop_length)
    frame_len = window + tau_max
    x = w.samples.astype(np.float64)
    frames = _frame_signal(x, frame_len, hop_length, T, offset=-(frame_len // 2))
    cmnd = yin_cmnd(frames, window, tau_max)

    f0 = np.zeros(T)
    for t in range(T):
        d = cmnd[t]
        below = np.nonzero(d[tau_min:tau_max] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + int(below[0])
        while tau + 1 < tau_max and d[tau + 1] < d[tau]:
            tau += 1
        period = _parabolic(d, tau)
        if period <= 0:
            continue
        hz = sr / period
        if fmin <= hz <= fmax:
            f0[t] = hz
    return F0Contour(f0, hop_length / sr, meta={"extractor": "yin"})


register_f0_extractor("yin", lambda w, fmin, fmax, hop_length, threshold=0.15:
                      yin(w, fmin, fmax, hop_length, threshold))


def extract_f0(w: Waveform, fmin: float = 50.0, fmax: float = 1100.0, hop_length: int = 240,
               threshold: float = 0.15, extractor: str = "yin") -> F0Contour:
    if not 0 < fmin < fmax <= w.sample_rate / 2:
        raise ConfigError("need 0 < fmin < fmax <= sample_rate/2")
    if len(w) < int(math.ceil(w.sample_rate / fmin)):
        raise EmptyInputError("waveform shorter than one analysis window")
    try:
        fn = _EXTRACTORS[extractor]
    except KeyError:
        raise ConfigError(f"unknown F0 extractor '{extractor}'") from None
    if extractor == "yin":
        return fn(w, fmin, fmax, hop_length, threshold)
    return fn(w, fmin, fmax, hop_length)


def extract_f0_cfg(w: Waveform, cfg) -> F0Contour:
    """Extract F0 using the ``pitch`` and ``audio`` sections of a Config."""
    return extract_f0(w, cfg.pitch.fmin, cfg.pitch.fmax, cfg.audio.hop_length,
                      cfg.pitch.yin_threshold, cfg.pitch.extractor)


# ---------------------------------------------------------------- statistics

def voiced_values(contours) -> np.ndarray:
    if isinstance(contours, F0Contour):
        contours = [contours]
    vals = [c.f0_hz[c.voiced] for c in contours]
    return np.concatenate(vals) if vals else np.zeros(0)


def f0_statistics(c) -> F0Stats:
    """Mean/std of log F0 over voiced frames. Accepts one contour or several (pooled)."""
    v = voiced_values(c)
    if v.size == 0:
        raise NoVoicedFramesError("contour has no voiced frames")
    logf = np.log(v)
    return F0Stats(float(logf.mean()), float(logf.std()), float(v.mean()), float(v.std()), int(v.size))


_MIN_LOG_STD = 1e-3
_MIN_HZ_STD = 0.1


def shift_f0(c: F0Contour, src: F0Stats, tgt: F0Stats, fmin: float = 50.0, fmax: float = 1100.0,
             domain: str = "log", mode: str = "affine", fallback: bool = False,
             min_std: float | None = None) -> F0Contour:
    """Map voiced frames so their distribution follows ``tgt``.

    With ``mode='affine'`` the mean and spread are matched, with ``'mean'``
    only the mean.  A zero-spread source against a spread target raises
    :class:`DegenerateStatsError` unless ``fallback`` is set, in which case a
    mean-only shift is applied and recorded in ``meta['shift_fallback']``.
    """
    if domain == "log":
        s_mean, s_std, t_mean, t_std = src.mean_logf0, src.std_logf0, tgt.mean_logf0, tgt.std_logf0
    elif domain == "linear":
        s_mean, s_std, t_mean, t_std = src.mean_hz, src.std_hz, tgt.mean_hz, tgt.std_hz
    else:
        raise ConfigError(f"unknown shift domain '{domain}'")
    if min_std is None:
        min_std = _MIN_LOG_STD if domain == "log" else _MIN_HZ_STD
    meta = dict(c.meta)
    scale = 1.0
    if mode == "affine":
        if s_std > min_std:
            scale = t_std / s_std
        elif t_std > 0:
            if not fallback:
                raise DegenerateStatsError("source F0 has zero spread but target spread is positive")
            meta["shift_fallback"] = "mean_only"
    elif mode != "mean":
        raise ConfigError(f"unknown shift mode '{mode}'")

    out = c.f0_hz.copy()
    v = c.voiced
    if domain == "log":
        out[v] = np.exp(t_mean + (np.log(out[v]) - s_mean) * scale)
    else:
        out[v] = t_mean + (out[v] - s_mean) * scale
    out[v] = np.clip(out[v], fmin, fmax)
    return F0Contour(out, c.hop_seconds, meta=meta)


# -------------------------------------------------------------- quantization

def quantize_f0(c: F0Contour, num_bins: int = 256, fmin: float = 50.0, fmax: float = 1100.0) -> QuantizedF0:
    """Bin 0 marks unvoiced frames; bins 1..L-1 are log-uniform over [fmin, fmax]."""
    if num_bins < 2:
        raise ConfigError("need at least 2 bins")
    if not 0 < fmin < fmax:
        raise ConfigError("need 0 < fmin < fmax")
    f = c.f0_hz
    out = np.zeros(len(f), dtype=np.int64)
    v = f > 0
    pos = (np.log(f[v]) - math.log(fmin)) / (math.log(fmax) - math.log(fmin))
    out[v] = np.clip(1 + np.floor((num_bins - 1) * pos), 1, num_bins - 1).astype(np.int64)
    return QuantizedF0(out, num_bins)


def upsample_f0(c: F0Contour, hop_length: int) -> np.ndarray:
    """Per-sample F0: linear towards the next voiced frame, held at the end of a run, 0 when unvoiced."""
    f = c.f0_hz
    T = len(f)
    nxt = np.empty(T)
    nxt[:-1] = f[1:]
    nxt[-1:] = f[-1:]
    nxt = np.where(nxt > 0, nxt, f)
    frac = np.arange(hop_length) / hop_length
    out = f[:, None] + (nxt - f)[:, None] * frac[None, :]
    out[f <= 0] = 0.0
    return out.reshape(-1)


# ------------------------------------------------------------------ sidecars

def write_f0(c: F0Contour, path: str | os.PathLike) -> None:
    """``F0C1`` | u32 T | f32 hop_seconds | T x f32 Hz (0 = unvoiced), little-endian."""
    body = np.asarray(c.f0_hz, dtype="<f4").tobytes()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(F0_MAGIC + struct.pack("<If", len(c), c.hop_seconds) + body)
    os.replace(tmp, path)


def read_f0(path: str | os.PathLike) -> F0Contour:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != F0_MAGIC:
        raise ContractError(f"{path}: not an F0 sidecar")
    T, hop = struct.unpack("<If", raw[4:12])
    vals = np.frombuffer(raw[12:], dtype="<f4")
    if vals.size != T:
        raise ContractError(f"{path}: header says {T} frames, found {vals.size}")
    return F0Contour(vals.astype(np.float64), float(hop))
