"""Source pitch perturbation and the adaptation augmentation chain.

All randomness comes from an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import maximum_filter1d
from scipy.signal import resample, sosfilt

from .audio_io import Waveform
from .errors import ConfigError, EmptyInputError
from .pitch import extract_f0

_N_FFT = 1024
_HOP = 256
_LIFTER = 24
# envelope correction gain cap, natural-log units (about +-26 dB)
_MAX_LOG_GAIN = 3.0
_FLOOR_REL = 1e-2
_PEQ_Q_RANGE = (2.0, 5.0)
_PEQ_FREQ_RANGE = (60.0, 10000.0)


@dataclass
class AugmentationSpec:
    formant_shift_range: tuple[float, float] = (1 / 1.4, 1.4)
    pitch_shift_range: tuple[float, float] = (-12.0, 12.0)
    peq_band_count: int = 8
    peq_gain_range: tuple[float, float] = (-12.0, 12.0)
    speed_range: tuple[float, float] = (0.8, 1.25)
    use_formant_shift: bool = True
    use_pitch_randomize: bool = True
    use_random_peq: bool = True
    use_speed_adjust: bool = True
    seed: int | None = None

    def __post_init__(self):
        checks = [("formant_shift_range", self.formant_shift_range, 1.0),
                  ("pitch_shift_range", self.pitch_shift_range, 0.0),
                  ("peq_gain_range", self.peq_gain_range, 0.0),
                  ("speed_range", self.speed_range, 1.0)]
        for name, (lo, hi), ident in checks:
            if not lo <= ident <= hi:
                raise ConfigError(f"{name}={lo, hi} must contain the identity value {ident}")

    @classmethod
    def from_config(cls, p, seed: int | None = None) -> "AugmentationSpec":
        return cls(tuple(p.formant_shift_range), tuple(p.pitch_shift_range), p.peq_band_count,
                   tuple(p.peq_gain_range), tuple(p.speed_range), p.use_formant_shift,
                   p.use_pitch_randomize, p.use_random_peq, p.use_speed_adjust, seed)

    @classmethod
    def identity(cls) -> "AugmentationSpec":
        return cls((1.0, 1.0), (0.0, 0.0), 8, (0.0, 0.0), (1.0, 1.0))


def _check_ratio(ratio: float, name: str) -> None:
    if not 0.5 < ratio < 2.0:
        raise ConfigError(f"{name} ratio {ratio} outside (0.5, 2.0)")


def _check_nonempty(w: Waveform) -> None:
    if len(w) == 0:
        raise EmptyInputError("empty waveform")


def _stft(x: np.ndarray) -> torch.Tensor:
    win = torch.hann_window(_N_FFT, dtype=torch.float64)
    return torch.stft(torch.from_numpy(x), _N_FFT, _HOP, window=win, center=True,
                      pad_mode="constant", return_complex=True)


def _istft(spec: torch.Tensor, length: int) -> np.ndarray:
    win = torch.hann_window(_N_FFT, dtype=torch.float64)
    return torch.istft(spec, _N_FFT, _HOP, window=win, center=True, length=length).numpy()


def _pad_short(x: np.ndarray) -> tuple[np.ndarray, int]:
    n = len(x)
    if n < _N_FFT:
        x = np.pad(x, (0, _N_FFT - n))
    return x, n


def time_stretch(x: np.ndarray, rate: float) -> np.ndarray:
    """Phase-vocoder time stretch; ``rate > 1`` shortens. Output has round(N / rate) samples."""
    x, n = _pad_short(np.asarray(x, dtype=np.float64))
    D = _stft(x).numpy()
    n_bins, n_frames = D.shape
    steps = np.arange(0, n_frames, rate)
    D = np.pad(D, [(0, 0), (0, 2)])
    advance = np.pi * _HOP * np.arange(n_bins) / (_N_FFT // 2)
    i0 = steps.astype(int)
    alpha = (steps - i0)[None, :]
    left, right = D[:, i0], D[:, i0 + 1]
    mag = (1 - alpha) * np.abs(left) + alpha * np.abs(right)
    dphase = np.angle(right) - np.angle(left) - advance[:, None]
    dphase -= 2 * np.pi * np.round(dphase / (2 * np.pi))
    inc = advance[:, None] + dphase
    phase = np.angle(D[:, :1]) + np.concatenate([np.zeros((n_bins, 1)), np.cumsum(inc[:, :-1], axis=1)], axis=1)
    out_len = int(round(len(x) / rate))
    y = _istft(torch.from_numpy(mag * np.exp(1j * phase)), out_len)
    return y[:int(round(n / rate))]


def _resample_to(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) == n:
        return x.copy()
    return resample(x, n)


def _pitch_shift_raw(x: np.ndarray, ratio: float) -> np.ndarray:
    # stretch by ratio, then resample back to the original length: pitch and formants scale by ratio
    n = len(x)
    stretched = time_stretch(x, 1.0 / ratio)
    return _resample_to(stretched, n)


def _harmonic_spacing_bins(x: np.ndarray, sample_rate: int) -> int:
    """Half-width (bins) of the max filter that bridges harmonic gaps: one median F0."""
    c = extract_f0(Waveform(x, sample_rate), hop_length=_HOP)
    if not c.voiced.any():
        return _N_FFT // (2 * _LIFTER)
    return max(2, int(math.ceil(float(np.median(c.f0_hz[c.voiced])) * _N_FFT / sample_rate)))


def _warp_envelope(x: np.ndarray, ratio: float, spacing: int = _N_FFT // (2 * _LIFTER)) -> np.ndarray:
    """Move the spectral envelope by ``ratio``.

    The envelope is the cepstrally smoothed upper hull of the log spectrum.
    ``spacing`` is the harmonic spacing in bins: it sets the max-filter width
    of the hull, so the envelope runs through harmonic peaks rather than the
    gaps between them, and the cepstral cut-off.
    """
    x, n = _pad_short(np.asarray(x, dtype=np.float64))
    spec = _stft(x)
    mag = spec.abs().numpy()
    logmag = np.log(np.maximum(mag, 1e-8 * (mag.max() + 1e-12)))
    logmag = maximum_filter1d(logmag, size=2 * spacing + 1, axis=0, mode="nearest")
    ceps = np.fft.irfft(logmag, axis=0)
    # cepstral order follows the harmonic spacing: about sr / (2 F0), never below _LIFTER
    lifter = max(_LIFTER, _N_FFT // (2 * spacing))
    ceps[lifter:ceps.shape[0] - lifter + 1] = 0.0
    env = np.fft.rfft(ceps, axis=0).real[:mag.shape[0]]
    bins = np.arange(mag.shape[0], dtype=np.float64)
    src = bins / ratio
    warped = np.stack([np.interp(src, bins, env[:, t]) for t in range(env.shape[1])], axis=1)
    gain = np.exp(np.clip(warped - env, -_MAX_LOG_GAIN, _MAX_LOG_GAIN))
    # never lift bins far below the frame peak: a sparse spectrum has no envelope there
    floor = mag < _FLOOR_REL * mag.max(axis=0, keepdims=True)
    gain = np.where(floor, np.minimum(gain, 1.0), gain)
    y = _istft(spec * torch.from_numpy(gain), len(x))
    return y[:n]


def formant_shift(w: Waveform, ratio: float) -> Waveform:
    """Move the spectral envelope by ``ratio`` keeping F0 and duration."""
    _check_nonempty(w)
    _check_ratio(ratio, "formant shift")
    if ratio == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate, meta={"formant_ratio": ratio})
    spacing = _harmonic_spacing_bins(w.samples, w.sample_rate)
    y = _warp_envelope(w.samples, ratio, spacing)
    return Waveform(y.astype(np.float32), w.sample_rate, meta={"formant_ratio": ratio})


def pitch_randomize(w: Waveform, semitones: float) -> Waveform:
    """Formant-preserving pitch shift by ``semitones`` at constant duration."""
    _check_nonempty(w)
    if abs(semitones) > 24:
        raise ConfigError(f"pitch shift of {semitones} semitones exceeds +-24")
    ratio = 2.0 ** (semitones / 12.0)
    if semitones == 0:
        return Waveform(w.samples.copy(), w.sample_rate, meta={"semitones": semitones})
    spacing = _harmonic_spacing_bins(w.samples, w.sample_rate)
    y = _pitch_shift_raw(w.samples.astype(np.float64), ratio)
    y = _warp_envelope(y, 1.0 / ratio, max(2, int(round(spacing * ratio))))
    return Waveform(y.astype(np.float32), w.sample_rate, meta={"semitones": semitones})


def pitch_perturb(w: Waveform, rng: np.random.Generator,
                  semitone_range: tuple[float, float] = (-12.0, 12.0)) -> Waveform:
    lo, hi = semitone_range
    semitones = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    out = pitch_randomize(w, semitones)
    out.meta = {"semitones": semitones}
    return out


def peaking_sos(freq: float, gain_db: float, q: float, sample_rate: int) -> np.ndarray:
    """One RBJ peaking biquad as a second-order section row."""
    A = 10.0 ** (gain_db / 40.0)
    w0 = 2 * math.pi * freq / sample_rate
    alpha = math.sin(w0) / (2 * q)
    cw = math.cos(w0)
    b = np.array([1 + alpha * A, -2 * cw, 1 - alpha * A])
    a = np.array([1 + alpha / A, -2 * cw, 1 - alpha / A])
    return np.concatenate([b / a[0], a / a[0]])


def random_peq(w: Waveform, rng: np.random.Generator, band_count: int = 8,
               gain_range: tuple[float, float] = (-12.0, 12.0)) -> Waveform:
    _check_nonempty(w)
    nyq = w.sample_rate / 2
    f_lo, f_hi = _PEQ_FREQ_RANGE[0], min(_PEQ_FREQ_RANGE[1], 0.9 * nyq)
    bands = []
    for _ in range(band_count):
        freq = float(math.exp(rng.uniform(math.log(f_lo), math.log(f_hi))))
        gain = float(rng.uniform(*gain_range)) if gain_range[1] > gain_range[0] else float(gain_range[0])
        q = float(rng.uniform(*_PEQ_Q_RANGE))
        bands.append((freq, gain, q))
    if not bands:
        return Waveform(w.samples.copy(), w.sample_rate, meta={"peq": []})
    sos = np.stack([peaking_sos(f, g, q, w.sample_rate) for f, g, q in bands])
    y = sosfilt(sos, w.samples.astype(np.float64))
    return Waveform(y.astype(np.float32), w.sample_rate, meta={"peq": bands})


def speed_adjust(w: Waveform, ratio: float) -> Waveform:
    """Naive resampling: duration scales by 1/ratio, F0 by ratio."""
    _check_nonempty(w)
    _check_ratio(ratio, "speed")
    n = max(1, int(round(len(w) / ratio)))
    y = _resample_to(w.samples.astype(np.float64), n)
    return Waveform(y.astype(np.float32), w.sample_rate, meta={"speed_ratio": ratio})


def _draw(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def augment(w: Waveform, spec: AugmentationSpec, rng: np.random.Generator | None = None) -> Waveform:
    """Apply every enabled augmentation with freshly drawn parameters.

    The drawn parameters end up in ``meta`` of the returned waveform.
    """
    _check_nonempty(w)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    meta: dict = {}
    out = w
    if spec.use_formant_shift:
        r = _draw(rng, *spec.formant_shift_range)
        out = formant_shift(out, r)
        meta["formant_ratio"] = r
    if spec.use_pitch_randomize:
        s = _draw(rng, *spec.pitch_shift_range)
        out = pitch_randomize(out, s)
        meta["semitones"] = s
    if spec.use_random_peq:
        out = random_peq(out, rng, spec.peq_band_count, spec.peq_gain_range)
        meta["peq"] = out.meta["peq"]
    if spec.use_speed_adjust:
        r = _draw(rng, *spec.speed_range)
        out = speed_adjust(out, r)
        meta["speed_ratio"] = r
    y = out.samples
    peak = float(np.max(np.abs(y))) if len(y) else 0.0
    if peak > 1.0:
        y = y * (0.99 / peak)
    return Waveform(y, w.sample_rate, meta=meta)
