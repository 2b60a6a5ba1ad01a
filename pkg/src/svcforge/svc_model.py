"""CVAE networks: posterior/prior encoders, coupling flow, NSF decoder, discriminators.

Tensors are channels-first, ``(batch, channels, time)``, with ``(batch, 1, time)``
float masks, as in VITS.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import weight_norm

from .errors import ContractError, RegistryError
from .pbtc import PBTC, PbtcConfig

LRELU_SLOPE = 0.1


def sequence_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def get_padding(kernel_size: int, dilation: int = 1) -> int:
    return (kernel_size * dilation - dilation) // 2


def init_weights(m, mean=0.0, std=0.01):
    if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
        m.weight.data.normal_(mean, std)


def slice_segments(x: torch.Tensor, starts: torch.Tensor, size: int) -> torch.Tensor:
    return torch.stack([x[i, :, int(s):int(s) + size] for i, s in enumerate(starts)])


class GaussianSequence(NamedTuple):
    mean: torch.Tensor
    log_std: torch.Tensor

    def sample(self, generator: torch.Generator | None = None, temperature: float = 1.0) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype,
                          device=self.mean.device)
        return self.mean + eps * torch.exp(self.log_std) * temperature


# ------------------------------------------------------------------ building blocks

class WN(nn.Module):
    """Non-causal WaveNet stack with gated activations and residual/skip outputs."""

    def __init__(self, hidden_channels, kernel_size, dilation_rate, n_layers, gin_channels=0, p_dropout=0.0):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.n_layers = n_layers
        self.gin_channels = gin_channels
        self.in_layers = nn.ModuleList()
        self.res_skip_layers = nn.ModuleList()
        self.drop = nn.Dropout(p_dropout)
        if gin_channels:
            self.cond_layer = nn.Conv1d(gin_channels, 2 * hidden_channels * n_layers, 1)
        for i in range(n_layers):
            dilation = dilation_rate ** i
            padding = (kernel_size * dilation - dilation) // 2
            self.in_layers.append(nn.Conv1d(hidden_channels, 2 * hidden_channels, kernel_size,
                                            dilation=dilation, padding=padding))
            out = 2 * hidden_channels if i < n_layers - 1 else hidden_channels
            self.res_skip_layers.append(nn.Conv1d(hidden_channels, out, 1))

    def forward(self, x, x_mask, g=None):
        output = torch.zeros_like(x)
        h = self.hidden_channels
        if g is not None and self.gin_channels:
            g = self.cond_layer(g)
        for i in range(self.n_layers):
            x_in = self.in_layers[i](x)
            if g is not None and self.gin_channels:
                x_in = x_in + g[:, i * 2 * h:(i + 1) * 2 * h]
            acts = torch.tanh(x_in[:, :h]) * torch.sigmoid(x_in[:, h:])
            acts = self.drop(acts)
            res_skip = self.res_skip_layers[i](acts)
            if i < self.n_layers - 1:
                x = (x + res_skip[:, :h]) * x_mask
                output = output + res_skip[:, h:]
            else:
                output = output + res_skip
        return output * x_mask


class LayerNorm(nn.Module):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        x = x.transpose(1, -1)
        x = F.layer_norm(x, (x.shape[-1],), self.gamma, self.beta, self.eps)
        return x.transpose(1, -1)


class MultiHeadAttention(nn.Module):
    def __init__(self, channels, n_heads, p_dropout=0.0):
        super().__init__()
        if channels % n_heads:
            raise ContractError(f"{channels} channels not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.k_channels = channels // n_heads
        self.conv_q = nn.Conv1d(channels, channels, 1)
        self.conv_k = nn.Conv1d(channels, channels, 1)
        self.conv_v = nn.Conv1d(channels, channels, 1)
        self.conv_o = nn.Conv1d(channels, channels, 1)
        self.drop = nn.Dropout(p_dropout)
        for conv in (self.conv_q, self.conv_k, self.conv_v):
            nn.init.xavier_uniform_(conv.weight)

    def forward(self, x, attn_mask):
        b, d, t = x.shape
        q = self.conv_q(x).view(b, self.n_heads, self.k_channels, t).transpose(2, 3)
        k = self.conv_k(x).view(b, self.n_heads, self.k_channels, t).transpose(2, 3)
        v = self.conv_v(x).view(b, self.n_heads, self.k_channels, t).transpose(2, 3)
        scores = torch.matmul(q / math.sqrt(self.k_channels), k.transpose(-2, -1))
        scores = scores.masked_fill(attn_mask == 0, -1e4)
        p_attn = self.drop(F.softmax(scores, dim=-1))
        out = torch.matmul(p_attn, v).transpose(2, 3).contiguous().view(b, d, t)
        return self.conv_o(out)


class FFN(nn.Module):
    def __init__(self, channels, filter_channels, kernel_size, p_dropout=0.0):
        super().__init__()
        pad = kernel_size // 2
        self.conv_1 = nn.Conv1d(channels, filter_channels, kernel_size, padding=pad)
        self.conv_2 = nn.Conv1d(filter_channels, channels, kernel_size, padding=pad)
        self.drop = nn.Dropout(p_dropout)

    def forward(self, x, x_mask):
        x = self.conv_1(x * x_mask)
        x = self.drop(torch.relu(x))
        return self.conv_2(x * x_mask) * x_mask


def sinusoidal_positions(length: int, channels: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(channels // 2, dtype=torch.float64)[None, :]
    angle = pos / torch.pow(10000.0, 2 * i / channels)
    pe = torch.zeros(length, channels, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)[:, :channels - channels // 2]
    return pe.T.to(dtype)


class TransformerEncoder(nn.Module):
    def __init__(self, hidden_channels, filter_channels, n_heads, n_layers, kernel_size=3, p_dropout=0.0):
        super().__init__()
        self.drop = nn.Dropout(p_dropout)
        self.attn = nn.ModuleList([MultiHeadAttention(hidden_channels, n_heads, p_dropout) for _ in range(n_layers)])
        self.norm1 = nn.ModuleList([LayerNorm(hidden_channels) for _ in range(n_layers)])
        self.ffn = nn.ModuleList([FFN(hidden_channels, filter_channels, kernel_size, p_dropout) for _ in range(n_layers)])
        self.norm2 = nn.ModuleList([LayerNorm(hidden_channels) for _ in range(n_layers)])

    def forward(self, x, x_mask):
        attn_mask = x_mask.unsqueeze(2) * x_mask.unsqueeze(-1)
        x = x * x_mask
        for attn, n1, ffn, n2 in zip(self.attn, self.norm1, self.ffn, self.norm2):
            y = self.drop(attn(x, attn_mask))
            x = n1(x + y)
            y = self.drop(ffn(x, x_mask))
            x = n2(x + y)
        return x * x_mask


# ------------------------------------------------------------------ encoders

class PosteriorEncoder(nn.Module):
    """Linear spectrogram -> q(z|y)."""

    def __init__(self, in_channels, out_channels, hidden_channels, kernel_size, dilation_rate, n_layers,
                 gin_channels=0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.pre = nn.Conv1d(in_channels, hidden_channels, 1)
        self.enc = WN(hidden_channels, kernel_size, dilation_rate, n_layers, gin_channels)
        self.proj = nn.Conv1d(hidden_channels, out_channels * 2, 1)

    def forward(self, spec, x_mask, g=None) -> GaussianSequence:
        if spec.dim() != 3 or spec.shape[1] != self.in_channels:
            raise ContractError(f"posterior encoder expects (B, {self.in_channels}, T), got {tuple(spec.shape)}")
        x = self.pre(spec) * x_mask
        x = self.enc(x, x_mask, g=g)
        stats = self.proj(x) * x_mask
        m, logs = torch.split(stats, self.out_channels, dim=1)
        return GaussianSequence(m, logs)


class PriorEncoder(nn.Module):
    """(BNF, pitch embedding, speaker) -> p(z|c) via a Transformer."""

    def __init__(self, bnf_dim, out_channels, hidden_channels, filter_channels, n_heads, n_layers,
                 kernel_size, p_dropout, speaker_dim=0):
        super().__init__()
        self.out_channels = out_channels
        self.hidden_channels = hidden_channels
        self.bnf_proj = nn.Linear(bnf_dim, hidden_channels)
        self.spk_proj = nn.Linear(speaker_dim, hidden_channels) if speaker_dim else None
        self.encoder = TransformerEncoder(hidden_channels, filter_channels, n_heads, n_layers, kernel_size, p_dropout)
        self.proj = nn.Conv1d(hidden_channels, out_channels * 2, 1)

    def forward(self, bnf, pitch_emb, spk=None, x_mask=None) -> GaussianSequence:
        """``bnf`` (B, T, D), ``pitch_emb`` (B, T, H), ``spk`` (B, E), ``x_mask`` (B, 1, T)."""
        if bnf.shape[:2] != pitch_emb.shape[:2]:
            raise ContractError(f"BNF {tuple(bnf.shape[:2])} and pitch {tuple(pitch_emb.shape[:2])} lengths differ")
        x = self.bnf_proj(bnf) + pitch_emb
        if spk is not None and self.spk_proj is not None:
            x = x + self.spk_proj(spk).unsqueeze(1)
        x = x.transpose(1, 2)
        if x_mask is None:
            x_mask = torch.ones(x.shape[0], 1, x.shape[2], dtype=x.dtype, device=x.device)
        x = x + sinusoidal_positions(x.shape[2], self.hidden_channels, x.dtype).to(x.device)
        x = self.encoder(x * x_mask, x_mask)
        stats = self.proj(x) * x_mask
        m, logs = torch.split(stats, self.out_channels, dim=1)
        return GaussianSequence(m, logs)


# ------------------------------------------------------------------ flow

class ResidualCouplingLayer(nn.Module):
    """Affine coupling: x1 <- m(x0) + x1 * exp(logs(x0)); zero-initialised to the identity."""

    def __init__(self, channels, hidden_channels, kernel_size, dilation_rate, n_layers, gin_channels=0):
        super().__init__()
        if channels % 2:
            raise ContractError("coupling layers need an even channel count")
        self.half = channels // 2
        self.pre = nn.Conv1d(self.half, hidden_channels, 1)
        self.enc = WN(hidden_channels, kernel_size, dilation_rate, n_layers, gin_channels)
        self.post = nn.Conv1d(hidden_channels, 2 * self.half, 1)
        self.post.weight.data.zero_()
        self.post.bias.data.zero_()

    def forward(self, x, x_mask, g=None, reverse=False):
        x0, x1 = torch.split(x, [self.half, self.half], 1)
        h = self.pre(x0) * x_mask
        h = self.enc(h, x_mask, g=g)
        stats = self.post(h) * x_mask
        m, logs = torch.split(stats, [self.half, self.half], 1)
        if not reverse:
            x1 = m + x1 * torch.exp(logs) * x_mask
            return torch.cat([x0, x1], 1), torch.sum(logs, [1, 2])
        x1 = (x1 - m) * torch.exp(-logs) * x_mask
        return torch.cat([x0, x1], 1)


class Flip(nn.Module):
    def forward(self, x, *args, reverse=False, **kwargs):
        x = torch.flip(x, [1])
        if not reverse:
            return x, torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)
        return x


class CouplingFlow(nn.Module):
    def __init__(self, channels, hidden_channels, kernel_size, dilation_rate, n_layers, n_flows=4, gin_channels=0):
        super().__init__()
        self.flows = nn.ModuleList()
        for _ in range(n_flows):
            self.flows.append(ResidualCouplingLayer(channels, hidden_channels, kernel_size, dilation_rate,
                                                    n_layers, gin_channels))
            self.flows.append(Flip())

    def forward(self, z, x_mask, g=None):
        """z -> (z', logdet) with logdet summed over channels and valid frames, per example."""
        if not torch.all(torch.isfinite(z)):
            raise ContractError("flow input contains non-finite values")
        logdet = torch.zeros(z.shape[0], dtype=z.dtype, device=z.device)
        for flow in self.flows:
            z, ld = flow(z, x_mask, g=g)
            logdet = logdet + ld
        return z, logdet

    def inverse(self, z, x_mask, g=None):
        if not torch.all(torch.isfinite(z)):
            raise ContractError("flow input contains non-finite values")
        for flow in reversed(self.flows):
            z = flow(z, x_mask, g=g, reverse=True)
        return z


# ------------------------------------------------------------------ source + decoder

class SourceModule(nn.Module):
    """Sine excitation from per-sample F0.

    voiced:   e_t = amp * sin(sum_{k<=t} 2 pi f_k / sr + phi) + n_t
    unvoiced: e_t = 100 * n_t,   n_t ~ N(0, noise_std^2),  phi ~ U[-pi, pi] per utterance
    """

    def __init__(self, sample_rate, amplitude=0.1, noise_std=0.003):
        super().__init__()
        self.sample_rate = sample_rate
        self.amplitude = amplitude
        self.noise_std = noise_std

    def forward(self, f0, generator: torch.Generator | None = None, phase: torch.Tensor | None = None,
                noise: bool = True):
        """``f0`` (B, N) Hz -> excitation (B, 1, N)."""
        if f0.dim() == 1:
            f0 = f0.unsqueeze(0)
        if torch.any(f0 < 0):
            raise ContractError("negative F0 passed to the source module")
        b = f0.shape[0]
        f64 = f0.detach().to(torch.float64)
        if phase is None:
            phase = (torch.rand(b, 1, generator=generator, dtype=torch.float64) * 2 - 1) * math.pi
        else:
            phase = torch.as_tensor(phase, dtype=torch.float64).reshape(-1, 1).expand(b, 1)
        acc = torch.cumsum(2 * math.pi * f64 / self.sample_rate, dim=1)
        acc = torch.remainder(acc + phase, 2 * math.pi)
        sine = (self.amplitude * torch.sin(acc)).to(f0.dtype)
        if noise:
            n = torch.randn(f0.shape, generator=generator, dtype=torch.float64).to(f0.dtype) * self.noise_std
        else:
            n = torch.zeros_like(f0)
        e = torch.where(f0 > 0, sine + n, 100.0 * n)
        return e.unsqueeze(1)


class ResBlock(nn.Module):
    def __init__(self, channels, kernel_size=3, dilation=(1, 3, 5)):
        super().__init__()
        self.convs1 = nn.ModuleList([
            nn.Conv1d(channels, channels, kernel_size, 1, dilation=d, padding=get_padding(kernel_size, d))
            for d in dilation])
        self.convs2 = nn.ModuleList([
            nn.Conv1d(channels, channels, kernel_size, 1, dilation=1, padding=get_padding(kernel_size, 1))
            for _ in dilation])
        self.convs1.apply(init_weights)
        self.convs2.apply(init_weights)

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            xt = c2(F.leaky_relu(c1(F.leaky_relu(x, LRELU_SLOPE)), LRELU_SLOPE))
            x = xt + x
        return x


def _updown_geometry(factor: int) -> tuple[int, int]:
    # kernel/padding pair for which a stride-`factor` (transposed) conv maps length L <-> L*factor exactly
    pad = factor // 2
    return factor + 2 * pad, pad


class NSFGenerator(nn.Module):
    """HiFi-GAN upsampler with the excitation injected after every upsampling stage."""

    def __init__(self, in_channels, upsample_rates, upsample_initial_channel, resblock_kernel_sizes,
                 resblock_dilation_sizes, gin_channels=0):
        super().__init__()
        self.upsample_rates = list(upsample_rates)
        self.hop = math.prod(self.upsample_rates)
        self.num_kernels = len(resblock_kernel_sizes)
        self.conv_pre = nn.Conv1d(in_channels, upsample_initial_channel, 7, 1, padding=3)
        self.ups = nn.ModuleList()
        self.noise_convs = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        ch = upsample_initial_channel
        for i, u in enumerate(self.upsample_rates):
            out_ch = max(1, upsample_initial_channel // (2 ** (i + 1)))
            k, p = _updown_geometry(u)
            self.ups.append(nn.ConvTranspose1d(ch, out_ch, k, u, padding=p))
            stride = math.prod(self.upsample_rates[i + 1:])
            if stride > 1:
                nk, npad = _updown_geometry(stride)
                self.noise_convs.append(nn.Conv1d(1, out_ch, nk, stride, padding=npad))
            else:
                self.noise_convs.append(nn.Conv1d(1, out_ch, 1))
            for kr, dr in zip(resblock_kernel_sizes, resblock_dilation_sizes):
                self.resblocks.append(ResBlock(out_ch, kr, dr))
            ch = out_ch
        self.conv_post = nn.Conv1d(ch, 1, 7, 1, padding=3, bias=False)
        self.ups.apply(init_weights)
        self.conv_post.apply(init_weights)
        self.cond = nn.Conv1d(gin_channels, upsample_initial_channel, 1) if gin_channels else None

    def forward(self, z, excitation, g=None):
        if excitation.dim() == 2:
            excitation = excitation.unsqueeze(1)
        expected = z.shape[-1] * self.hop
        if excitation.shape[-1] != expected:
            raise ContractError(f"excitation has {excitation.shape[-1]} samples, expected {expected}")
        x = self.conv_pre(z)
        if g is not None and self.cond is not None:
            x = x + self.cond(g)
        for i, up in enumerate(self.ups):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            x = x + self.noise_convs[i](excitation)
            xs = 0
            for j in range(self.num_kernels):
                xs = xs + self.resblocks[i * self.num_kernels + j](x)
            x = xs / self.num_kernels
        x = self.conv_post(F.leaky_relu(x))
        return torch.tanh(x)


# ------------------------------------------------------------------ discriminators

class DiscriminatorP(nn.Module):
    def __init__(self, period, channels, kernel_size=5, stride=3):
        super().__init__()
        self.period = period
        chans = [1] + list(channels)
        pad = get_padding(kernel_size, 1)
        self.convs = nn.ModuleList([
            weight_norm(nn.Conv2d(chans[i], chans[i + 1], (kernel_size, 1), (stride, 1), padding=(pad, 0)))
            for i in range(len(channels))])
        self.convs.append(weight_norm(nn.Conv2d(chans[-1], chans[-1], (kernel_size, 1), 1, padding=(pad, 0))))
        self.conv_post = weight_norm(nn.Conv2d(chans[-1], 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, x):
        fmap = []
        b, c, t = x.shape
        if t % self.period:
            n_pad = self.period - t % self.period
            x = F.pad(x, (0, n_pad), "reflect" if n_pad < t else "constant")
            t = t + n_pad
        x = x.view(b, c, t // self.period, self.period)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class DiscriminatorS(nn.Module):
    def __init__(self, channels):
        super().__init__()
        layers = [weight_norm(nn.Conv1d(1, channels[0], 15, 1, padding=7))]
        for cin, cout in zip(channels[:-1], channels[1:]):
            groups = math.gcd(4, math.gcd(cin, cout))
            layers.append(weight_norm(nn.Conv1d(cin, cout, 41, 4, groups=groups, padding=20)))
        layers.append(weight_norm(nn.Conv1d(channels[-1], channels[-1], 5, 1, padding=2)))
        self.convs = nn.ModuleList(layers)
        self.conv_post = weight_norm(nn.Conv1d(channels[-1], 1, 3, 1, padding=1))

    def forward(self, x):
        fmap = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class MultiDiscriminator(nn.Module):
    """Multi-period (one per period) plus multi-scale (average-pooled) discriminators."""

    def __init__(self, periods=(2, 3, 5, 7, 11), mpd_channels=(32, 128, 512, 1024),
                 msd_scales=3, msd_channels=(16, 64, 256, 1024)):
        super().__init__()
        self.mpd = nn.ModuleList([DiscriminatorP(p, mpd_channels) for p in periods])
        self.msd = nn.ModuleList([DiscriminatorS(list(msd_channels)) for _ in range(msd_scales)])
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def forward(self, y):
        """``y`` (B, 1, N) -> (list of score maps, list of feature-map lists), MPD first."""
        scores, fmaps = [], []
        for d in self.mpd:
            s, f = d(y)
            scores.append(s)
            fmaps.append(f)
        x = y
        for i, d in enumerate(self.msd):
            if i > 0:
                x = self.pool(x)
            s, f = d(x)
            scores.append(s)
            fmaps.append(f)
        return scores, fmaps


# ------------------------------------------------------------------ speakers

class SpeakerTable(nn.Module):
    """Speaker-id registry with stable integer indices and an embedding row per speaker."""

    def __init__(self, dim: int, speakers: list[str] | None = None):
        super().__init__()
        self.dim = dim
        self.ids: list[str] = list(speakers or [])
        self.embedding = nn.Embedding(len(self.ids), dim)
        nn.init.normal_(self.embedding.weight, 0.0, dim ** -0.5)

    def __len__(self):
        return len(self.ids)

    def index(self, speaker_id: str) -> int:
        try:
            return self.ids.index(speaker_id)
        except ValueError:
            raise RegistryError(f"unknown speaker '{speaker_id}'") from None

    def register(self, speaker_ids) -> list[str]:
        """Append unseen ids; existing indices never change. Returns the new ids."""
        new = [s for s in dict.fromkeys(speaker_ids) if s not in self.ids]
        if not new:
            return []
        old = self.embedding.weight.data
        rows = torch.randn(len(new), self.dim, dtype=old.dtype) * self.dim ** -0.5
        self.ids.extend(new)
        self.embedding = nn.Embedding(len(self.ids), self.dim).to(dtype=old.dtype)
        self.embedding.weight.data.copy_(torch.cat([old, rows], 0))
        return new

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= len(self.ids)):
            raise RegistryError(f"speaker index out of range for {len(self.ids)} registered speakers")
        return self.embedding(idx)


# ------------------------------------------------------------------ full generator

class SVCModel(nn.Module):
    """Generator side of the system; checkpoint namespaces match attribute names."""

    def __init__(self, cfg, speakers: list[str] | None = None):
        super().__init__()
        m, a = cfg.model, cfg.audio
        self.cfg = cfg
        self.hop = a.hop_length
        E = m.speaker_dim
        self.speakers = SpeakerTable(E, speakers)
        self.pbtc = PBTC(PbtcConfig.from_config(cfg))
        self.posterior = PosteriorEncoder(a.n_fft // 2 + 1, m.inter_channels, m.hidden_channels,
                                          m.posterior_kernel, m.posterior_dilation_rate, m.posterior_layers,
                                          gin_channels=E if m.speaker_in_posterior else 0)
        self.prior = PriorEncoder(cfg.content.dim, m.inter_channels, m.hidden_channels, m.filter_channels,
                                  m.n_heads, m.n_layers, m.kernel_size, m.p_dropout, speaker_dim=E)
        self.flow = CouplingFlow(m.inter_channels, m.hidden_channels, m.flow_kernel, 1, m.flow_layers,
                                 m.n_flows, gin_channels=E if m.speaker_in_flow else 0)
        self.source = SourceModule(a.sample_rate, m.excitation_amplitude, m.excitation_noise_std)
        self.decoder = NSFGenerator(m.inter_channels, m.upsample_rates, m.upsample_initial_channel,
                                    m.resblock_kernel_sizes, m.resblock_dilation_sizes,
                                    gin_channels=E if m.speaker_in_decoder else 0)

    def _cond(self, spk_idx):
        g = self.speakers(spk_idx)
        return g, g.unsqueeze(-1)

    def prior_stats(self, bnf, bins, spk_idx, x_mask):
        g, _ = self._cond(spk_idx)
        c_f0 = self.pbtc(bins, x_mask[:, 0])
        return self.prior(bnf, c_f0, g, x_mask)

    def forward(self, spec, lengths, bnf, bins, f0_samples, spk_idx, segment_frames, starts=None,
                generator=None):
        """Training pass.

        Returns the decoded segment, the chosen segment starts and everything the
        KL term needs.
        """
        T = spec.shape[-1]
        x_mask = sequence_mask(lengths, T).unsqueeze(1).to(spec.dtype)
        g, g_ch = self._cond(spk_idx)
        m = self.cfg.model
        q = self.posterior(spec, x_mask, g_ch if m.speaker_in_posterior else None)
        z = q.sample(generator) * x_mask
        z_p, logdet = self.flow(z, x_mask, g_ch if m.speaker_in_flow else None)
        c_f0 = self.pbtc(bins, x_mask[:, 0])
        p = self.prior(bnf, c_f0, g, x_mask)

        if starts is None:
            hi = (lengths - segment_frames).clamp(min=0) + 1
            starts = (torch.rand(len(lengths), generator=generator) * hi).long()
        z_slice = slice_segments(z, starts, segment_frames)
        f0_slice = torch.stack([f0_samples[i, int(s) * self.hop:(int(s) + segment_frames) * self.hop]
                                for i, s in enumerate(starts)])
        exc = self.source(f0_slice, generator=generator)
        y_hat = self.decoder(z_slice, exc, g_ch if m.speaker_in_decoder else None)
        return {"y_hat": y_hat, "starts": starts, "q": q, "z": z, "z_p": z_p, "logdet": logdet,
                "p": p, "x_mask": x_mask}

    @torch.no_grad()
    def infer(self, bnf, bins, f0_samples, spk_idx, temperature=0.667, generator=None):
        T = bnf.shape[1]
        x_mask = torch.ones(bnf.shape[0], 1, T, dtype=bnf.dtype)
        g, g_ch = self._cond(spk_idx)
        m = self.cfg.model
        p = self.prior(bnf, self.pbtc(bins, x_mask[:, 0]), g, x_mask)
        z_p = p.sample(generator, temperature) * x_mask
        z = self.flow.inverse(z_p, x_mask, g_ch if m.speaker_in_flow else None)
        exc = self.source(f0_samples, generator=generator)
        return self.decoder(z * x_mask, exc, g_ch if m.speaker_in_decoder else None)


def build_discriminator(cfg) -> MultiDiscriminator:
    m = cfg.model
    return MultiDiscriminator(m.mpd_periods, m.mpd_channels, m.msd_scales, m.msd_channels)
