"""Synthetic voice-like corpora for tests, smoke runs and demos.

Clips are harmonic sources shaped by per-speaker formant resonators, so
speakers differ in timbre while melody comes from the generator.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import Waveform, save_wav
from .data import ManifestEntry, write_manifest

# formant centre frequencies (Hz) per voice type
_FORMANTS = {
    "low": (600.0, 1000.0, 2400.0),
    "mid": (750.0, 1250.0, 2700.0),
    "high": (850.0, 1500.0, 3000.0),
    "bright": (700.0, 1800.0, 3300.0),
}


def harmonic_tone(f0, sample_rate: int = 24000, n_harmonics: int = 20, amplitude: float = 0.3,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Sum of harmonics with 1/k amplitudes following a per-sample F0 track (0 = silence)."""
    f0 = np.asarray(f0, dtype=np.float64)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    if rng is not None:
        phase = phase + rng.uniform(0, 2 * np.pi)
    out = np.zeros_like(f0)
    for k in range(1, n_harmonics + 1):
        audible = (k * f0) < 0.45 * sample_rate
        out += np.where(audible, np.sin(k * phase) / k, 0.0)
    out *= f0 > 0
    peak = np.max(np.abs(out))
    return (amplitude * out / peak if peak > 0 else out).astype(np.float32)


def formant_filter(x: np.ndarray, formants, sample_rate: int = 24000, bandwidth: float = 120.0) -> np.ndarray:
    y = np.zeros_like(x, dtype=np.float64)
    for i, fc in enumerate(formants):
        b, a = signal.iirpeak(fc, fc / bandwidth, fs=sample_rate)
        y += signal.lfilter(b, a, x) / (i + 1)
    y += 0.3 * x
    peak = np.max(np.abs(y))
    return (0.5 * y / peak if peak > 0 else y).astype(np.float32)


def _smooth_steps(values, durations, sample_rate: int, glide: float = 0.03) -> np.ndarray:
    track = np.concatenate([np.full(int(d * sample_rate), v, dtype=np.float64) for v, d in zip(values, durations)])
    n = max(int(glide * sample_rate), 1)
    kernel = np.ones(n) / n
    voiced = track > 0
    logf = np.where(voiced, np.log(np.maximum(track, 1e-3)), 0.0)
    smooth = np.exp(np.convolve(logf, kernel, mode="same") / np.maximum(np.convolve(voiced, kernel, mode="same"), 1e-9))
    return np.where(voiced, smooth, 0.0)


def speech_like(rng: np.random.Generator, voice: str = "mid", seconds: float = 1.0,
                sample_rate: int = 24000) -> Waveform:
    """Syllables with falling intonation, separated by short noise bursts."""
    base = {"low": 110.0, "mid": 150.0, "high": 210.0, "bright": 180.0}[voice]
    n = int(seconds * sample_rate)
    t = np.arange(n) / sample_rate
    f0 = base * (1.15 - 0.3 * t / seconds) * (1 + 0.05 * np.sin(2 * np.pi * 3.0 * t + rng.uniform(0, 6)))
    syll = 0.5 * (1 - np.cos(2 * np.pi * 4.0 * t + rng.uniform(0, 6)))
    f0 = np.where(syll > 0.15, f0, 0.0)
    x = harmonic_tone(f0, sample_rate, rng=rng) * syll
    x = x + (syll <= 0.15) * 0.02 * rng.standard_normal(n)
    return Waveform(formant_filter(x, _FORMANTS[voice], sample_rate), sample_rate)


def singing_like(rng: np.random.Generator, voice: str = "mid", seconds: float = 1.0,
                 sample_rate: int = 24000) -> Waveform:
    """Sustained notes from a pentatonic scale with 5.5 Hz vibrato."""
    base = {"low": 130.8, "mid": 196.0, "high": 293.7, "bright": 261.6}[voice]
    scale = np.array([0, 2, 4, 7, 9, 12])
    n_notes = max(int(round(seconds / 0.25)), 1)
    notes = base * 2 ** (rng.choice(scale, n_notes) / 12)
    f0 = _smooth_steps(notes, [seconds / n_notes] * n_notes, sample_rate)
    n = len(f0)
    t = np.arange(n) / sample_rate
    f0 = f0 * 2 ** (0.3 / 12 * np.sin(2 * np.pi * 5.5 * t))
    env = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.02)
    x = harmonic_tone(f0, sample_rate, rng=rng) * env
    return Waveform(formant_filter(x, _FORMANTS[voice], sample_rate), sample_rate)


def harmonic_clip(rng: np.random.Generator, f0: float, seconds: float = 1.0, sample_rate: int = 24000) -> Waveform:
    """Steady harmonic tone with a slight glide, no formant shaping."""
    n = int(seconds * sample_rate)
    track = f0 * (1 + 0.03 * np.linspace(-1, 1, n))
    return Waveform(harmonic_tone(track, sample_rate, rng=rng), sample_rate)


def make_corpus(out_dir: str | os.PathLike, kind: str, speakers: dict[str, str], clips_per_speaker: int,
                seconds: float = 1.0, seed: int = 0, sample_rate: int = 24000) -> Path:
    """Write WAVs plus ``manifest.tsv``; ``speakers`` maps speaker id to a voice type."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for spk, voice in speakers.items():
        for i in range(clips_per_speaker):
            if kind == "speech":
                w = speech_like(rng, voice, seconds, sample_rate)
            elif kind == "singing":
                w = singing_like(rng, voice, seconds, sample_rate)
            elif kind == "harmonic":
                w = harmonic_clip(rng, float(rng.uniform(110, 330)), seconds, sample_rate)
            else:
                raise ValueError(f"unknown corpus kind '{kind}'")
            path = out / f"{spk}_{i:03d}.wav"
            save_wav(w, path)
            entries.append(ManifestEntry(path, spk))
    manifest = out / "manifest.tsv"
    write_manifest(entries, manifest)
    return manifest
