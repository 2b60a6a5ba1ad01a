"""Dataset manifests and per-clip model features on the shared frame grid."""
from __future__ import annotations

import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio_io import Waveform, load_wav, spectrogram_for
from .content import ContentEncoder, align_to_grid, extract_bnf, read_bnf
from .errors import ConfigError, EmptyInputError
from .perturb import augment, pitch_perturb
from .pitch import (F0Contour, extract_f0_cfg, quantize_f0, read_f0, upsample_f0, write_f0)


@dataclass(frozen=True)
class ManifestEntry:
    wav: Path
    speaker: str
    f0: Path | None = None
    bnf: Path | None = None


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Tab-separated ``wav<TAB>speaker[<TAB>f0 sidecar[<TAB>bnf sidecar]]``; ``#`` starts a comment.

    Relative paths resolve against the manifest's directory; ``-`` leaves an
    optional column empty.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise ConfigError(f"{path}:{lineno}: expected at least wav and speaker columns")
        opt = [None if (i >= len(cols) or cols[i] in ("", "-")) else base / cols[i] for i in (2, 3)]
        entries.append(ManifestEntry(base / cols[0], cols[1], opt[0], opt[1]))
    if not entries:
        raise ConfigError(f"manifest {path} lists no clips")
    return entries


def write_manifest(entries, path: str | os.PathLike) -> None:
    base = Path(path).parent.resolve()
    lines = []
    for e in entries:
        cols = [_rel(e.wav, base), e.speaker]
        if e.f0 or e.bnf:
            cols.append(_rel(e.f0, base) if e.f0 else "-")
        if e.bnf:
            cols.append(_rel(e.bnf, base))
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


def _rel(p: Path, base: Path) -> str:
    p = Path(p).resolve()
    try:
        return str(p.relative_to(base))
    except ValueError:
        return str(p)


@dataclass
class ClipFeatures:
    """Model inputs for one clip, all on ``T = len(samples) // hop`` frames."""

    samples: np.ndarray  # T*hop
    spec: np.ndarray  # F x T
    f0: F0Contour  # T frames
    bins: np.ndarray  # T
    f0_samples: np.ndarray  # T*hop
    bnf: np.ndarray  # T x D
    speaker: str

    @property
    def frames(self) -> int:
        return self.bins.shape[0]


def trim_to_hop(w: Waveform, hop: int) -> Waveform:
    n = (len(w) // hop) * hop
    if n == 0:
        raise EmptyInputError(f"clip shorter than one hop ({hop} samples)")
    return Waveform(w.samples[:n], w.sample_rate)


def model_f0(w: Waveform, cfg, cached: F0Contour | None = None) -> F0Contour:
    hop = cfg.audio.hop_length
    T = len(w) // hop
    c = cached if cached is not None else extract_f0_cfg(w, cfg)
    f = c.f0_hz[:T]
    if len(f) < T:
        f = np.pad(f, (0, T - len(f)))
    return F0Contour(f, hop / cfg.audio.sample_rate, meta=dict(c.meta))


def clip_features(w: Waveform, speaker: str, cfg, encoder: ContentEncoder, *,
                  f0: F0Contour | None = None, content_wave: Waveform | None = None,
                  bnf_source=None) -> ClipFeatures:
    """Build model features. ``content_wave`` (e.g. a pitch-perturbed copy) feeds the content encoder."""
    hop = cfg.audio.hop_length
    w = trim_to_hop(w, hop)
    if len(w) < cfg.audio.win_length:
        n = -(-cfg.audio.win_length // hop) * hop
        w = Waveform(np.pad(w.samples, (0, n - len(w))), w.sample_rate)
    T = len(w) // hop
    spec = spectrogram_for(w, cfg.audio).frames[:T].T
    contour = model_f0(w, cfg, f0)
    q = quantize_f0(contour, cfg.pitch.bins, cfg.pitch.fmin, cfg.pitch.fmax)
    bnf = extract_bnf(content_wave if content_wave is not None else w, encoder, bnf_source)
    return ClipFeatures(w.samples.copy(), spec.astype(np.float32), contour, q.bins,
                        upsample_f0(contour, hop).astype(np.float32),
                        align_to_grid(bnf, T).astype(np.float32), speaker)


class FeatureStore:
    """Loads clips and caches clean features; perturbed content is recomputed on request."""

    def __init__(self, cfg, encoder: ContentEncoder):
        self.cfg = cfg
        self.encoder = encoder
        self._clean: dict[Path, ClipFeatures] = {}
        self._waves: dict[Path, Waveform] = {}
        self._once: dict[Path, np.ndarray] = {}

    def wave(self, e: ManifestEntry) -> Waveform:
        if e.wav not in self._waves:
            self._waves[e.wav] = trim_to_hop(load_wav(e.wav, self.cfg.audio.sample_rate), self.cfg.audio.hop_length)
        return self._waves[e.wav]

    def f0(self, e: ManifestEntry) -> F0Contour:
        if e.f0 is not None and e.f0.exists():
            return read_f0(e.f0)
        cache = e.wav.with_suffix(".f0")
        if self.cfg.training.cache_features and cache.exists():
            return read_f0(cache)
        c = extract_f0_cfg(self.wave(e), self.cfg)
        if self.cfg.training.cache_features:
            write_f0(c, cache)
        return c

    def clean(self, e: ManifestEntry) -> ClipFeatures:
        if e.wav not in self._clean:
            w = self.wave(e)
            feats = clip_features(w, e.speaker, self.cfg, self.encoder, f0=self.f0(e), bnf_source=e.wav)
            if e.bnf is not None and e.bnf.exists():
                feats.bnf = align_to_grid(read_bnf(e.bnf, self.encoder.encoder_id), feats.frames)
            self._clean[e.wav] = feats
        return self._clean[e.wav]

    def training_example(self, e: ManifestEntry, rng: np.random.Generator, augment_spec=None) -> ClipFeatures:
        """Features for one draw: optional augmentation, then pitch perturbation of the content path."""
        p = self.cfg.perturb
        if augment_spec is not None:
            w = trim_to_hop(augment(self.wave(e), augment_spec, rng), self.cfg.audio.hop_length)
            feats = clip_features(w, e.speaker, self.cfg, self.encoder)
        else:
            feats = self.clean(e)
        if not p.enabled:
            return feats
        if p.perturb_once and augment_spec is None:
            if e.wav not in self._once:
                # drawn from the clip path, not the shared stream, so a resumed run redraws the same shift
                once_rng = np.random.default_rng([self.cfg.seed, zlib.crc32(str(e.wav).encode())])
                pw = pitch_perturb(Waveform(feats.samples, self.cfg.audio.sample_rate), once_rng,
                                   tuple(p.semitone_range))
                self._once[e.wav] = align_to_grid(extract_bnf(pw, self.encoder), feats.frames)
            bnf = self._once[e.wav]
        else:
            pw = pitch_perturb(Waveform(feats.samples, self.cfg.audio.sample_rate), rng, tuple(p.semitone_range))
            bnf = align_to_grid(extract_bnf(pw, self.encoder), feats.frames)
        return ClipFeatures(feats.samples, feats.spec, feats.f0, feats.bins, feats.f0_samples,
                            bnf.astype(np.float32), feats.speaker)


def collate(examples: list[ClipFeatures], speaker_index, min_frames: int = 0) -> dict[str, torch.Tensor]:
    """Zero-pad a list of clips into batch tensors of at least ``min_frames`` frames."""
    T = max(max(x.frames for x in examples), min_frames)
    B = len(examples)
    hop = len(examples[0].samples) // examples[0].frames
    n_freq = examples[0].spec.shape[0]
    D = examples[0].bnf.shape[1]
    spec = torch.zeros(B, n_freq, T)
    bnf = torch.zeros(B, T, D)
    bins = torch.zeros(B, T, dtype=torch.long)
    f0s = torch.zeros(B, T * hop)
    wav = torch.zeros(B, 1, T * hop)
    lengths = torch.zeros(B, dtype=torch.long)
    spk = torch.zeros(B, dtype=torch.long)
    for i, x in enumerate(examples):
        t = x.frames
        spec[i, :, :t] = torch.from_numpy(x.spec)
        bnf[i, :t] = torch.from_numpy(x.bnf)
        bins[i, :t] = torch.from_numpy(x.bins)
        f0s[i, :t * hop] = torch.from_numpy(x.f0_samples)
        wav[i, 0, :t * hop] = torch.from_numpy(x.samples)
        lengths[i] = t
        spk[i] = speaker_index(x.speaker)
    return {"spec": spec, "bnf": bnf, "bins": bins, "f0_samples": f0s, "wav": wav,
            "lengths": lengths, "speaker": spk}
