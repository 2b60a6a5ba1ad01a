"""Hierarchical configuration: built-in profiles, YAML files and env overrides.

A config is a tree of dataclass sections (audio, pitch, perturb, content, pbtc,
model, losses, training).  Values are resolved in this order, later wins:

1. the selected profile (``vits`` or ``desk``),
2. a YAML file (``--config``),
3. environment variables ``SVCFORGE_<SECTION>__<KEY>=<yaml scalar>``.
"""
from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

ENV_PREFIX = "SVCFORGE_"


@dataclass
class AudioConfig:
    sample_rate: int = 24000
    n_fft: int = 1024
    hop_length: int = 240
    win_length: int = 1024
    n_mels: int = 80
    mel_fmin: float = 0.0
    mel_fmax: float = 12000.0


@dataclass
class PitchConfig:
    fmin: float = 50.0
    fmax: float = 1100.0
    bins: int = 256
    yin_threshold: float = 0.15
    extractor: str = "yin"
    f0_shift_domain: str = "log"  # log | linear
    f0_shift_mode: str = "affine"  # affine | mean


@dataclass
class PerturbConfig:
    # pitch perturbation in front of the content encoder
    enabled: bool = True
    perturb_once: bool = False
    perturb_at_inference: bool = False
    semitone_range: tuple[float, float] = (-12.0, 12.0)
    # adaptation-time augmentation
    formant_shift_range: tuple[float, float] = (1 / 1.4, 1.4)
    pitch_shift_range: tuple[float, float] = (-12.0, 12.0)
    peq_band_count: int = 8
    peq_gain_range: tuple[float, float] = (-12.0, 12.0)
    speed_range: tuple[float, float] = (0.8, 1.25)
    use_formant_shift: bool = True
    use_pitch_randomize: bool = True
    use_random_peq: bool = True
    use_speed_adjust: bool = True


@dataclass
class ContentConfig:
    encoder: str = "mock"  # mock | whisper
    dim: int = 1024
    layer: int = 20
    hop_seconds: float = 0.02
    sample_rate: int = 16000
    mock_seed: int = 0
    sidecar_dir: str | None = None
    tool_command: str | None = None


@dataclass
class PbtcSection:
    branches: int = 10
    filters: int = 256
    kernel_size: int = 3
    dilations: list[int] | None = None
    time_project: str = "truncate"  # truncate | linear


@dataclass
class ModelConfig:
    inter_channels: int = 192
    hidden_channels: int = 192
    filter_channels: int = 768
    n_heads: int = 2
    n_layers: int = 6
    kernel_size: int = 3
    p_dropout: float = 0.1
    posterior_layers: int = 16
    posterior_kernel: int = 5
    posterior_dilation_rate: int = 1
    n_flows: int = 4
    flow_layers: int = 4
    flow_kernel: int = 5
    speaker_dim: int = 256
    upsample_rates: list[int] = field(default_factory=lambda: [5, 4, 4, 3])
    upsample_initial_channel: int = 512
    resblock_kernel_sizes: list[int] = field(default_factory=lambda: [3, 7, 11])
    resblock_dilation_sizes: list[list[int]] = field(
        default_factory=lambda: [[1, 3, 5], [1, 3, 5], [1, 3, 5]])
    excitation_amplitude: float = 0.1
    excitation_noise_std: float = 0.003
    speaker_in_posterior: bool = True
    speaker_in_flow: bool = True
    speaker_in_decoder: bool = True
    mpd_periods: list[int] = field(default_factory=lambda: [2, 3, 5, 7, 11])
    mpd_channels: list[int] = field(default_factory=lambda: [32, 128, 512, 1024])
    msd_scales: int = 3
    msd_channels: list[int] = field(default_factory=lambda: [16, 64, 256, 1024])
    prior_temperature: float = 0.667


@dataclass
class LossConfig:
    recon_weight: float = 45.0
    kl_weight: float = 1.0
    use_feature_matching: bool = False
    fm_weight: float = 2.0
    wreg_lambda: float = 1e-3
    wreg_scope: str = "generator"  # generator | adapted


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.8, 0.99)
    adam_eps: float = 1e-9
    lr_decay: float | None = None
    batch_size: int = 96
    segment_size: int = 32768
    checkpoint_every: int = 0
    log_every: int = 1
    cache_features: bool = True
    reset_discriminator_per_stage: bool = False
    warmup_steps: int = 400_000
    pretrain_steps: int = 200_000
    adapt_steps: int = 50_000
    plot_losses: bool = True


@dataclass
class Config:
    audio: AudioConfig = field(default_factory=AudioConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    content: ContentConfig = field(default_factory=ContentConfig)
    pbtc: PbtcSection = field(default_factory=PbtcSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    profile: str = "vits"
    seed: int = 1234

    @property
    def frames_per_segment(self) -> int:
        return self.training.segment_size // self.audio.hop_length

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        cfg = cls()
        _merge_into(cfg, data)
        cfg.validate()
        return cfg

    def updated(self, overrides: dict[str, Any]) -> "Config":
        cfg = copy.deepcopy(self)
        _merge_into(cfg, overrides)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        a = self.audio
        if a.sample_rate <= 0:
            raise ConfigError("audio.sample_rate must be positive")
        if a.hop_length > a.win_length:
            raise ConfigError("audio.hop_length must not exceed audio.win_length")
        if a.mel_fmax > a.sample_rate / 2:
            raise ConfigError("audio.mel_fmax exceeds the Nyquist frequency")
        if _prod(self.model.upsample_rates) != a.hop_length:
            raise ConfigError(
                f"model.upsample_rates multiply to {_prod(self.model.upsample_rates)}, "
                f"expected hop_length {a.hop_length}")
        p = self.pitch
        if not 0 < p.fmin < p.fmax <= a.sample_rate / 2:
            raise ConfigError("pitch range must satisfy 0 < fmin < fmax <= sample_rate/2")
        if p.bins < 2:
            raise ConfigError("pitch.bins must be >= 2")
        if p.f0_shift_domain not in ("log", "linear"):
            raise ConfigError("pitch.f0_shift_domain must be 'log' or 'linear'")
        if p.f0_shift_mode not in ("affine", "mean"):
            raise ConfigError("pitch.f0_shift_mode must be 'affine' or 'mean'")
        if self.pbtc.time_project not in ("truncate", "linear"):
            raise ConfigError("pbtc.time_project must be 'truncate' or 'linear'")
        if self.content.encoder not in ("mock", "whisper"):
            raise ConfigError("content.encoder must be 'mock' or 'whisper'")
        if self.losses.wreg_scope not in ("generator", "adapted"):
            raise ConfigError("losses.wreg_scope must be 'generator' or 'adapted'")
        if self.frames_per_segment < 1:
            raise ConfigError("training.segment_size shorter than one hop")


def _prod(xs) -> int:
    out = 1
    for x in xs:
        out *= int(x)
    return out


def _merge_into(obj, data: dict[str, Any], prefix: str = "") -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping at '{prefix or '<root>'}'")
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge_into(current, value, f"{prefix}{key}.")
        else:
            if isinstance(current, tuple) and isinstance(value, list):
                value = tuple(value)
            setattr(obj, key, value)


DESK_OVERRIDES: dict[str, Any] = {
    "profile": "desk",
    "pbtc": {"filters": 32},
    "model": {
        "inter_channels": 64,
        "hidden_channels": 64,
        "filter_channels": 128,
        "n_heads": 2,
        "n_layers": 2,
        "p_dropout": 0.0,
        "posterior_layers": 4,
        "n_flows": 2,
        "flow_layers": 2,
        "speaker_dim": 32,
        "upsample_rates": [5, 4, 4, 3],
        "upsample_initial_channel": 64,
        "resblock_kernel_sizes": [3, 7],
        "resblock_dilation_sizes": [[1, 3], [1, 3]],
        "mpd_channels": [8, 16, 32, 32],
        "msd_channels": [8, 16, 32, 32],
    },
    "losses": {"recon_weight": 1.0, "kl_weight": 1.0},
    "training": {
        "learning_rate": 1e-4,
        "batch_size": 2,
        "segment_size": 8192,
        "warmup_steps": 50,
        "pretrain_steps": 50,
        "adapt_steps": 50,
    },
}

PROFILES = ("vits", "desk")


def profile_config(name: str = "vits") -> Config:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile '{name}', expected one of {PROFILES}")
    cfg = Config()
    if name == "desk":
        cfg = cfg.updated(DESK_OVERRIDES)
    cfg.validate()
    return cfg


def env_overrides(environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Collect ``SVCFORGE_SECTION__KEY`` variables into a nested override dict."""
    environ = os.environ if environ is None else environ
    out: dict[str, Any] = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = yaml.safe_load(raw)
    return out


def load_config(path: str | os.PathLike | None = None, profile: str | None = None,
                environ: dict[str, str] | None = None) -> Config:
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {p} must hold a mapping")
    env = env_overrides(environ)
    name = profile or env.get("profile") or data.get("profile") or "vits"
    cfg = profile_config(name)
    data.pop("profile", None)
    env.pop("profile", None)
    cfg = cfg.updated(data)
    return cfg.updated(env)


def dump_config(cfg: Config, path: str | os.PathLike) -> None:
    Path(path).write_text(yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=False))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
