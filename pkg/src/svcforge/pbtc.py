"""Parallel bank of transposed convolutions over quantized F0."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, ContractError
from .pitch import QuantizedF0


@dataclass
class PbtcConfig:
    num_bins: int = 256
    branches: int = 10
    filters: int = 256
    kernel_size: int = 3
    dilations: list[int] = field(default_factory=list)
    proj_dim: int = 192
    time_project: str = "truncate"

    def __post_init__(self):
        if not self.dilations:
            self.dilations = list(range(1, self.branches + 1))
        self.dilations = [int(d) for d in self.dilations]
        if len(self.dilations) != self.branches:
            raise ConfigError(f"{self.branches} branches but {len(self.dilations)} dilations")
        if min(self.dilations) < 1 or len(set(self.dilations)) != len(self.dilations):
            raise ConfigError("dilations must be distinct positive integers")
        if self.time_project not in ("truncate", "linear"):
            raise ConfigError(f"unknown time projection '{self.time_project}'")

    @classmethod
    def from_config(cls, cfg) -> "PbtcConfig":
        p = cfg.pbtc
        return cls(cfg.pitch.bins, p.branches, p.filters, p.kernel_size, list(p.dilations or []),
                   cfg.model.hidden_channels, p.time_project)

    def branch_length(self, T: int, k: int) -> int:
        """Length of branch ``k`` before projection back to ``T`` frames."""
        return T + self.dilations[k] * (self.kernel_size - 1)

    def parameter_count(self) -> int:
        L, K, Fn, k, P = self.num_bins, self.branches, self.filters, self.kernel_size, self.proj_dim
        return (L * Fn + Fn) + K * (Fn * Fn * k + Fn) + K * (Fn * P + P)


class PBTC(nn.Module):
    """one-hot(L) -> Linear -> K dilated ConvTranspose1d -> per-branch Linear -> sum."""

    def __init__(self, cfg: PbtcConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.num_bins, cfg.filters)
        self.convs = nn.ModuleList([
            nn.ConvTranspose1d(cfg.filters, cfg.filters, cfg.kernel_size, stride=1, dilation=d)
            for d in cfg.dilations])
        self.outs = nn.ModuleList([nn.Linear(cfg.filters, cfg.proj_dim) for _ in cfg.dilations])

    def branch_outputs(self, onehot: torch.Tensor, mask: torch.Tensor | None = None,
                       keep_raw: bool = False):
        """Per-branch activations; ``onehot`` is (B, T, L), ``mask`` (B, T)."""
        if onehot.shape[-1] != self.cfg.num_bins:
            raise ContractError(f"expected {self.cfg.num_bins} bins, got {onehot.shape[-1]}")
        T = onehot.shape[1]
        h = self.proj(onehot)
        if mask is not None:
            h = h * mask.unsqueeze(-1)
        h = h.transpose(1, 2)
        raw, outs = [], []
        for conv, lin, d in zip(self.convs, self.outs, self.cfg.dilations):
            y = conv(h)  # (B, F, T + d*(k-1))
            raw.append(y)
            outs.append(lin(self._to_length(y, T, d).transpose(1, 2)))
        return (outs, raw) if keep_raw else outs

    def _to_length(self, y: torch.Tensor, T: int, d: int) -> torch.Tensor:
        if self.cfg.time_project == "linear":
            return F.interpolate(y, size=T, mode="linear", align_corners=True)
        start = d * (self.cfg.kernel_size - 1) // 2
        return y[:, :, start:start + T]

    def forward_onehot(self, onehot: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        out = sum(self.branch_outputs(onehot, mask))
        if mask is not None:
            out = out * mask.unsqueeze(-1)
        return out

    def forward(self, bins: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """``bins`` (B, T) integer tensor -> (B, T, proj_dim)."""
        if bins.numel() and (int(bins.min()) < 0 or int(bins.max()) >= self.cfg.num_bins):
            raise ContractError(f"F0 bins outside [0, {self.cfg.num_bins - 1}]")
        onehot = F.one_hot(bins.long(), self.cfg.num_bins).to(self.proj.weight.dtype)
        return self.forward_onehot(onehot, mask)


def pbtc_init(cfg: PbtcConfig, seed: int = 0) -> PBTC:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        module = PBTC(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return module


def pbtc_forward(q: QuantizedF0, module: PBTC) -> np.ndarray:
    if q.num_bins != module.cfg.num_bins:
        raise ContractError(f"quantizer has {q.num_bins} bins, PBTC expects {module.cfg.num_bins}")
    with torch.no_grad():
        bins = torch.from_numpy(q.bins).unsqueeze(0)
        return module(bins)[0].numpy()


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
