"""Any-to-one conversion with a trained checkpoint."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio_io import Waveform, load_wav, save_wav
from .checkpoint import GENERATOR_NAMESPACES, config_of, generator_from_checkpoint, load_checkpoint, target_stats_of
from .config import Config, profile_config
from .content import align_to_grid, build_encoder, extract_bnf
from .data import FeatureStore, model_f0, read_manifest, trim_to_hop
from .errors import ConfigError, DegenerateStatsError, NoVoicedFramesError
from .perturb import pitch_perturb
from .pitch import F0Contour, F0Stats, f0_statistics, quantize_f0, shift_f0, upsample_f0

log = logging.getLogger(__name__)


@dataclass
class ConversionRequest:
    source: Path
    speaker: str
    checkpoint: Path
    seed: int = 0
    f0_shift: bool = True
    output: Path | None = None

    def __post_init__(self):
        self.source = Path(self.source)
        self.checkpoint = Path(self.checkpoint)
        self.output = Path(self.output) if self.output else None


@dataclass
class ConversionFeatures:
    """Everything the synthesis step consumes, on ``T`` model frames."""

    samples: np.ndarray  # source audio trimmed to T*hop
    bnf: np.ndarray  # T x D, from the (optionally perturbed) content path
    f0_source: F0Contour
    f0: F0Contour  # after shifting
    bins: np.ndarray  # T
    f0_samples: np.ndarray  # T*hop
    warnings: list[dict] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return len(self.bins)


class Converter:
    """Loads the generator once and converts any number of clips."""

    def __init__(self, checkpoint: str | os.PathLike):
        state = load_checkpoint(checkpoint, namespaces=GENERATOR_NAMESPACES)
        self.cfg: Config = config_of(state)
        self.model = generator_from_checkpoint(state, self.cfg)
        self.target_stats: dict[str, F0Stats] = target_stats_of(state)
        self.encoder = build_encoder(self.cfg)

    @property
    def hop(self) -> int:
        return self.cfg.audio.hop_length

    def prepare_features(self, w: Waveform, speaker: str, f0_shift: bool = True, seed: int = 0,
                         source_path=None) -> ConversionFeatures:
        self.model.speakers.index(speaker)  # unknown speaker -> RegistryError
        cfg = self.cfg
        w = trim_to_hop(w, self.hop)
        if len(w) < cfg.audio.win_length:
            n = -(-cfg.audio.win_length // self.hop) * self.hop
            w = Waveform(np.pad(w.samples, (0, n - len(w))), w.sample_rate)
        T = len(w) // self.hop
        warnings: list[dict] = []

        content = w
        if cfg.perturb.perturb_at_inference:
            content = pitch_perturb(w, np.random.default_rng(seed), tuple(cfg.perturb.semitone_range))
            source_path = None
        bnf = align_to_grid(extract_bnf(content, self.encoder, source_path), T)

        src = model_f0(w, cfg)
        shifted = src
        if f0_shift:
            shifted = self._shift(src, speaker, warnings)
        q = quantize_f0(shifted, cfg.pitch.bins, cfg.pitch.fmin, cfg.pitch.fmax)
        return ConversionFeatures(w.samples.copy(), bnf.astype(np.float32), src, shifted, q.bins,
                                  upsample_f0(shifted, self.hop).astype(np.float32), warnings)

    def _shift(self, src: F0Contour, speaker: str, warnings: list[dict]) -> F0Contour:
        p = self.cfg.pitch
        tgt = self.target_stats.get(speaker)
        if tgt is None:
            warnings.append(_warn("no_target_stats", f"checkpoint has no F0 statistics for '{speaker}'; "
                                  "F0 left unshifted"))
            return src
        try:
            stats = f0_statistics(src)
        except NoVoicedFramesError:
            warnings.append(_warn("unvoiced_source", "source has no voiced frames; F0 left unshifted"))
            return src
        try:
            return shift_f0(src, stats, tgt, p.fmin, p.fmax, p.f0_shift_domain, p.f0_shift_mode)
        except DegenerateStatsError:
            warnings.append(_warn("mean_only_shift", "source F0 has no spread; applied a mean-only shift"))
            return shift_f0(src, stats, tgt, p.fmin, p.fmax, p.f0_shift_domain, "mean")

    def synthesize(self, feats: ConversionFeatures, speaker: str, seed: int = 0) -> Waveform:
        gen = torch.Generator().manual_seed(int(seed))
        spk = torch.tensor([self.model.speakers.index(speaker)])
        y = self.model.infer(torch.from_numpy(feats.bnf)[None], torch.from_numpy(feats.bins)[None],
                             torch.from_numpy(feats.f0_samples)[None], spk,
                             temperature=self.cfg.model.prior_temperature, generator=gen)
        meta = {"speaker": speaker, "seed": seed, "warnings": feats.warnings}
        return Waveform(y[0, 0].numpy().astype(np.float32), self.cfg.audio.sample_rate, meta=meta)

    def convert_wave(self, w: Waveform, speaker: str, seed: int = 0, f0_shift: bool = True,
                     source_path=None) -> Waveform:
        feats = self.prepare_features(w, speaker, f0_shift, seed, source_path)
        for rec in feats.warnings:
            log.warning("%s: %s", rec["warning"], rec["message"])
        return self.synthesize(feats, speaker, seed)


def _warn(code: str, message: str) -> dict:
    return {"warning": code, "message": message}


def convert(req: ConversionRequest, converter: Converter | None = None) -> Waveform:
    """Convert ``req.source`` to ``req.speaker``; writes ``req.output`` when set."""
    conv = converter or Converter(req.checkpoint)
    w = load_wav(req.source, conv.cfg.audio.sample_rate)
    out = conv.convert_wave(w, req.speaker, req.seed, req.f0_shift, source_path=req.source)
    if req.output is not None:
        save_wav(out, req.output)
    return out


def compute_target_stats(manifest: str | os.PathLike, cfg: Config | None = None,
                         speaker: str | None = None) -> F0Stats:
    """Pooled voiced log-F0 statistics over the manifest's clips (optionally one speaker's)."""
    cfg = cfg or profile_config("desk")
    entries = read_manifest(manifest)
    if speaker is not None:
        entries = [e for e in entries if e.speaker == speaker]
        if not entries:
            raise ConfigError(f"manifest {manifest} has no clips for speaker '{speaker}'")
    store = FeatureStore(cfg, encoder=None)
    return f0_statistics([store.f0(e) for e in entries])
