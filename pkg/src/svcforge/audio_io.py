"""Waveform container, WAV I/O, resampling and the STFT/mel front-end."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioIOError, ConfigError, ContractError, EmptyInputError

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-5
# sqrt(p + eps) - sqrt(eps) is exactly 0 at p = 0 and has a finite gradient there
_MAG_EPS = 1e-12


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise ContractError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class LinearSpectrogram:
    frames: np.ndarray  # T x (n_fft/2 + 1)
    n_fft: int
    hop_length: int
    win_length: int


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # T x n_mels, natural-log compressed
    n_mels: int
    fmin: float
    fmax: float
    hop_length: int


def load_wav(path: str | os.PathLike, target_rate: int | None = 24000) -> Waveform:
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError as exc:
        raise AudioIOError(f"no such file: {path}") from exc
    except (ValueError, OSError) as exc:
        raise AudioIOError(f"unreadable WAV file {path}: {exc}") from exc
    data = _to_float(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.size == 0:
        raise EmptyInputError(f"{path} holds zero-length audio")
    peak = float(np.max(np.abs(data)))
    if peak > 1.0:
        log.warning("%s: float samples reach %.3f, clipping to [-1, 1]", path, peak)
        data = np.clip(data, -1.0, 1.0)
    w = Waveform(data, int(rate))
    if target_rate is not None and target_rate != rate:
        w = resample(w, target_rate)
    return w


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float32) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(np.float32) / float(-np.iinfo(data.dtype).min)
    return data.astype(np.float32)


def save_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write 16-bit PCM mono, clipping to [-1, 1]."""
    pcm = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(pcm * 32767.0).astype(np.int16)
    tmp = f"{os.fspath(path)}.tmp"
    wavfile.write(tmp, int(w.sample_rate), pcm)
    os.replace(tmp, path)


def resample(w: Waveform, target_rate: int) -> Waveform:
    if target_rate <= 0:
        raise ConfigError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    g = math.gcd(int(target_rate), int(w.sample_rate))
    up, down = target_rate // g, w.sample_rate // g
    y = resample_poly(w.samples.astype(np.float64), up, down)
    return Waveform(y.astype(np.float32), int(target_rate))


def num_frames(n_samples: int, hop_length: int) -> int:
    """Frame count of a center-padded STFT."""
    return n_samples // hop_length + 1


@lru_cache(maxsize=16)
def _mel_basis_np(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    return mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax)


def _hz_to_mel(f):
    # Slaney auditory-toolbox scale: linear below 1 kHz, log above
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = f / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mels)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    freqs = f_sp * m
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), freqs)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Slaney-normalised triangular mel filters, shape (n_mels, n_fft//2 + 1)."""
    fftfreqs = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    mel_f = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_f)
    ramps = mel_f[:, None] - fftfreqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    enorm = 2.0 / (mel_f[2:n_mels + 2] - mel_f[:n_mels])
    return (weights * enorm[:, None]).astype(np.float32)


def stft_magnitude(y: torch.Tensor, n_fft: int, hop_length: int, win_length: int) -> torch.Tensor:
    """Center-padded Hann STFT magnitude. ``y`` is (..., N); returns (..., n_fft//2+1, T)."""
    if hop_length > win_length:
        raise ConfigError("hop_length must not exceed win_length")
    if y.shape[-1] < win_length:
        raise EmptyInputError(f"need at least {win_length} samples, got {y.shape[-1]}")
    lead = y.shape[:-1]
    flat = y.reshape(-1, y.shape[-1])
    window = torch.hann_window(win_length, dtype=y.dtype, device=y.device)
    pad = n_fft // 2
    flat = torch.nn.functional.pad(flat.unsqueeze(1), (pad, pad), mode="reflect").squeeze(1)
    spec = torch.stft(flat, n_fft, hop_length=hop_length, win_length=win_length, window=window,
                      center=False, return_complex=True)
    power = spec.real ** 2 + spec.imag ** 2
    mag = torch.sqrt(power + _MAG_EPS) - math.sqrt(_MAG_EPS)
    return mag.reshape(*lead, mag.shape[-2], mag.shape[-1])


def mel_from_magnitude(mag: torch.Tensor, sample_rate: int, n_fft: int, n_mels: int,
                       fmin: float, fmax: float) -> torch.Tensor:
    basis = torch.from_numpy(_mel_basis_np(sample_rate, n_fft, n_mels, float(fmin), float(fmax)))
    basis = basis.to(dtype=mag.dtype, device=mag.device)
    mel = torch.matmul(basis, mag)
    return torch.log(torch.clamp(mel, min=LOG_FLOOR))


def mel_torch(y: torch.Tensor, cfg) -> torch.Tensor:
    """Log-mel of a batch of waveforms under an ``AudioConfig``; (..., n_mels, T)."""
    if cfg.mel_fmax > cfg.sample_rate / 2:
        raise ConfigError("mel fmax exceeds Nyquist")
    mag = stft_magnitude(y, cfg.n_fft, cfg.hop_length, cfg.win_length)
    return mel_from_magnitude(mag, cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.mel_fmin, cfg.mel_fmax)


def linear_spectrogram(w: Waveform, n_fft: int = 1024, hop: int = 240, win: int = 1024) -> LinearSpectrogram:
    if hop > win:
        raise ConfigError("hop must not exceed win")
    if len(w) < win:
        raise EmptyInputError(f"waveform has {len(w)} samples, fewer than win={win}")
    y = torch.from_numpy(w.samples.astype(np.float64))
    mag = stft_magnitude(y, n_fft, hop, win)
    return LinearSpectrogram(mag.T.numpy().astype(np.float32), n_fft, hop, win)


def mel_spectrogram(w: Waveform, n_mels: int = 80, fmin: float = 0.0, fmax: float = 12000.0,
                    n_fft: int = 1024, hop: int = 240, win: int = 1024) -> MelSpectrogram:
    if fmax > w.sample_rate / 2:
        raise ConfigError(f"fmax={fmax} exceeds Nyquist {w.sample_rate / 2}")
    if len(w) < win:
        raise EmptyInputError(f"waveform has {len(w)} samples, fewer than win={win}")
    y = torch.from_numpy(w.samples.astype(np.float64))
    mag = stft_magnitude(y, n_fft, hop, win)
    mel = mel_from_magnitude(mag, w.sample_rate, n_fft, n_mels, fmin, fmax)
    return MelSpectrogram(mel.T.numpy().astype(np.float32), n_mels, fmin, fmax, hop)


def spectrogram_for(w: Waveform, cfg) -> LinearSpectrogram:
    return linear_spectrogram(w, cfg.n_fft, cfg.hop_length, cfg.win_length)


def mel_for(w: Waveform, cfg) -> MelSpectrogram:
    return mel_spectrogram(w, cfg.n_mels, cfg.mel_fmin, cfg.mel_fmax,
                           cfg.n_fft, cfg.hop_length, cfg.win_length)
