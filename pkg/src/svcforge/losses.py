"""Training objectives: mel L1, flow KL, LSGAN terms, totals and weight regularisation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .errors import ContractError
from .svc_model import GaussianSequence

_LOG_2PI = math.log(2 * math.pi)


@dataclass
class LossReport:
    recon: float = 0.0
    kl: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    wreg: float = 0.0
    fm: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


def recon_loss(mel_y: torch.Tensor, mel_hat: torch.Tensor) -> torch.Tensor:
    if mel_y.shape != mel_hat.shape:
        raise ContractError(f"mel shapes differ: {tuple(mel_y.shape)} vs {tuple(mel_hat.shape)}")
    return torch.mean(torch.abs(mel_y - mel_hat))


def gaussian_log_density(x: torch.Tensor, dist: GaussianSequence) -> torch.Tensor:
    """Elementwise diagonal-Gaussian log density."""
    z = (x - dist.mean) * torch.exp(-dist.log_std)
    return -0.5 * _LOG_2PI - dist.log_std - 0.5 * z ** 2


def kl_loss(q: GaussianSequence, z_q: torch.Tensor, z_p: torch.Tensor, logdet: torch.Tensor,
            p: GaussianSequence, mask: torch.Tensor, reduce: bool = True) -> torch.Tensor:
    """Single-sample KL estimate through the flow.

    ``log q(z_q) - logdet - log p(z_p)`` summed over channels and averaged over
    valid frames.  ``logdet`` is the per-example flow log-determinant (summed
    over channels and valid frames); ``mask`` is (B, 1, T).  With
    ``reduce=False`` one value per example is returned.
    """
    for name, t in (("q.log_std", q.log_std), ("p.log_std", p.log_std)):
        if not torch.all(torch.isfinite(t)):
            raise ContractError(f"{name} contains non-finite values")
    log_q = gaussian_log_density(z_q, q)
    log_p = gaussian_log_density(z_p, p)
    per_example = torch.sum((log_q - log_p) * mask, dim=[1, 2]) - logdet
    frames = torch.sum(mask, dim=[1, 2])
    if not reduce:
        return per_example / frames
    return torch.sum(per_example) / torch.sum(frames)


def adv_g(fake_scores) -> torch.Tensor:
    """sum over sub-discriminators of mean (D(G(z)) - 1)^2."""
    if isinstance(fake_scores, torch.Tensor):
        fake_scores = [fake_scores]
    return sum(torch.mean((s - 1) ** 2) for s in fake_scores)


def adv_d(real_scores, fake_scores) -> torch.Tensor:
    """sum over sub-discriminators of mean (D(y) - 1)^2 + mean D(G(z))^2."""
    if isinstance(real_scores, torch.Tensor):
        real_scores, fake_scores = [real_scores], [fake_scores]
    if len(real_scores) != len(fake_scores):
        raise ContractError("real and generated score lists differ in length")
    return sum(torch.mean((r - 1) ** 2) + torch.mean(f ** 2) for r, f in zip(real_scores, fake_scores))


def feature_matching(real_fmaps, fake_fmaps) -> torch.Tensor:
    loss = 0
    for dr, dg in zip(real_fmaps, fake_fmaps):
        for r, g in zip(dr, dg):
            loss = loss + torch.mean(torch.abs(r.detach() - g))
    return loss


def total_g(adv, recon, kl, wreg=0.0, wreg_lambda=0.0, fm=0.0, recon_weight=1.0, kl_weight=1.0, fm_weight=0.0):
    return adv + recon_weight * recon + kl_weight * kl + fm_weight * fm + wreg_lambda * wreg


def total_d(adv):
    return adv


def weight_reg(reference: dict[str, torch.Tensor], params) -> torch.Tensor:
    """||theta - theta_ref||^2 over the named parameters present in ``reference``.

    ``params`` is a mapping or iterable of ``(name, tensor)`` pairs; the
    reference tensors are treated as constants.
    """
    items = params.items() if isinstance(params, dict) else params
    total = None
    for name, p in items:
        ref = reference.get(name)
        if ref is None:
            continue
        if ref.shape != p.shape:
            raise ContractError(f"reference for '{name}' has shape {tuple(ref.shape)}, parameter {tuple(p.shape)}")
        term = torch.sum((p - ref.detach()) ** 2)
        total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total


def snapshot(params) -> dict[str, torch.Tensor]:
    """Frozen copy of named parameters, used as the weight-regularisation reference."""
    items = params.items() if isinstance(params, dict) else params
    return {name: p.detach().clone() for name, p in items}
