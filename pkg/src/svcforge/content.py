"""Bottleneck-feature (BNF) content encoders.

Two encoders implement :class:`ContentEncoder`:

* :class:`MockEncoder` - seeded random projection of a 16 kHz log-mel, used for
  offline tests and desk-scale training.
* :class:`WhisperSidecarEncoder` - reads ``<clip>.bnf`` files written by an
  external layer-20 Whisper extractor, or runs that extractor through a
  configurable shell command.
"""
from __future__ import annotations

import os
import shlex
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .audio_io import MelSpectrogram, Waveform, mel_spectrogram, resample, save_wav
from .errors import ContractError, EncoderUnavailableError

BNF_MAGIC = b"BNF1"


@dataclass
class BnfSequence:
    frames: np.ndarray  # T_b x D
    hop_seconds: float
    encoder_id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] == 0:
            raise ContractError(f"BNF frames must be a non-empty T x D matrix, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ContractError("BNF frames contain non-finite values")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


class ContentEncoder(Protocol):
    encoder_id: str
    dim: int
    hop_seconds: float

    def encode(self, w: Waveform, source: str | os.PathLike | None = None) -> BnfSequence: ...


def write_bnf(b: BnfSequence, path: str | os.PathLike) -> None:
    """``BNF1`` | u32 T_b | u32 D | f32 hop_seconds | T_b*D f32 row-major, little-endian."""
    T, D = b.frames.shape
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(BNF_MAGIC + struct.pack("<IIf", T, D, b.hop_seconds))
        fh.write(np.ascontiguousarray(b.frames, dtype="<f4").tobytes())
    os.replace(tmp, path)


def read_bnf(path: str | os.PathLike, encoder_id: str = "sidecar") -> BnfSequence:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BNF_MAGIC:
        raise ContractError(f"{path}: not a BNF sidecar")
    T, D, hop = struct.unpack("<IIf", raw[4:16])
    vals = np.frombuffer(raw[16:], dtype="<f4")
    if vals.size != T * D:
        raise ContractError(f"{path}: header says {T}x{D}, found {vals.size} values")
    return BnfSequence(vals.reshape(T, D).copy(), float(hop), encoder_id)


class MockEncoder:
    """tanh(P @ mel + bias) with P, bias drawn from ``seed``; stands in for Whisper."""

    def __init__(self, seed: int = 0, dim: int = 1024, n_mels: int = 80, sample_rate: int = 16000,
                 hop_seconds: float = 0.02):
        self.seed = seed
        self.dim = dim
        self.n_mels = n_mels
        self.sample_rate = sample_rate
        self.hop_seconds = hop_seconds
        self.encoder_id = f"mock-{seed}-{dim}"
        rng = np.random.default_rng(seed)
        self.projection = (rng.standard_normal((dim, n_mels)) / n_mels).astype(np.float32)
        self.bias = (0.1 * rng.standard_normal(dim)).astype(np.float32)
        self.hop = int(round(hop_seconds * sample_rate))
        self.n_fft = 4 * self.hop

    def project(self, mel: np.ndarray) -> np.ndarray:
        if mel.ndim != 2 or mel.shape[1] != self.n_mels:
            raise ContractError(f"mock encoder expects T x {self.n_mels} mel, got {mel.shape}")
        return np.tanh(mel.astype(np.float32) @ self.projection.T + self.bias)

    def encode(self, w: Waveform, source=None) -> BnfSequence:
        w16 = resample(w, self.sample_rate)
        if len(w16) < self.n_fft:
            w16 = Waveform(np.pad(w16.samples, (0, self.n_fft - len(w16))), self.sample_rate)
        mel = mel_spectrogram(w16, self.n_mels, 0.0, self.sample_rate / 2, self.n_fft, self.hop, self.n_fft)
        return BnfSequence(self.project(mel.frames), self.hop_seconds, self.encoder_id)


def mock_encode(mel: MelSpectrogram, seed: int = 0, dim: int = 1024) -> BnfSequence:
    enc = MockEncoder(seed, dim, n_mels=mel.n_mels)
    return BnfSequence(enc.project(mel.frames), enc.hop_seconds, enc.encoder_id)


class WhisperSidecarEncoder:
    """Adapter over externally extracted Whisper encoder hidden states.

    Resolution order for a clip ``x.wav``: ``sidecar_dir/x.bnf`` (when set),
    then ``x.bnf`` beside the audio, then ``tool_command``.  The command is a
    template receiving ``{wav}``, ``{out}`` and ``{layer}``; it gets a 16 kHz
    copy of the audio and must write a BNF1 file to ``{out}``.
    """

    sample_rate = 16000

    def __init__(self, dim: int = 1024, layer: int = 20, hop_seconds: float = 0.02,
                 sidecar_dir: str | os.PathLike | None = None, tool_command: str | None = None):
        self.dim = dim
        self.layer = layer
        self.hop_seconds = hop_seconds
        self.sidecar_dir = Path(sidecar_dir) if sidecar_dir else None
        self.tool_command = tool_command
        self.encoder_id = f"whisper-medium-l{layer}"

    def _candidates(self, source: Path):
        if self.sidecar_dir is not None:
            yield self.sidecar_dir / (source.stem + ".bnf")
        yield source.with_suffix(".bnf")

    def encode(self, w: Waveform, source: str | os.PathLike | None = None) -> BnfSequence:
        if source is not None:
            for cand in self._candidates(Path(source)):
                if cand.exists():
                    return self._checked(read_bnf(cand, self.encoder_id))
        if self.tool_command:
            return self._checked(self._run_tool(w))
        raise EncoderUnavailableError(
            f"no BNF sidecar for {source or '<in-memory audio>'} and no content.tool_command configured")

    def _run_tool(self, w: Waveform) -> BnfSequence:
        with tempfile.TemporaryDirectory() as tmp:
            wav = Path(tmp) / "clip.wav"
            out = Path(tmp) / "clip.bnf"
            save_wav(resample(w, self.sample_rate), wav)
            cmd = self.tool_command.format(wav=shlex.quote(str(wav)), out=shlex.quote(str(out)),
                                           layer=self.layer)
            proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
            if proc.returncode != 0 or not out.exists():
                raise EncoderUnavailableError(
                    f"BNF tool failed (exit {proc.returncode}): {proc.stderr.strip()[-500:]}")
            return read_bnf(out, self.encoder_id)

    def _checked(self, b: BnfSequence) -> BnfSequence:
        if b.dim != self.dim:
            raise ContractError(f"BNF dimension {b.dim} does not match encoder dimension {self.dim}")
        return b


def build_encoder(cfg) -> ContentEncoder:
    c = cfg.content
    if c.encoder == "mock":
        return MockEncoder(c.mock_seed, c.dim, sample_rate=c.sample_rate, hop_seconds=c.hop_seconds)
    return WhisperSidecarEncoder(c.dim, c.layer, c.hop_seconds, c.sidecar_dir, c.tool_command)


def extract_bnf(w: Waveform, encoder: ContentEncoder, source: str | os.PathLike | None = None) -> BnfSequence:
    b = encoder.encode(w, source)
    if b.dim != encoder.dim:
        raise ContractError(f"encoder {encoder.encoder_id} produced dim {b.dim}, expected {encoder.dim}")
    return b


def align_to_grid(b: BnfSequence | np.ndarray, T: int) -> np.ndarray:
    """Linearly resample BNF rows onto ``T`` model frames (frame j reads source position j*T_b/T)."""
    frames = b.frames if isinstance(b, BnfSequence) else np.asarray(b, dtype=np.float32)
    Tb = frames.shape[0]
    if T <= 0:
        raise ContractError("target frame count must be positive")
    if Tb == T:
        return frames.copy()
    pos = np.minimum(np.arange(T) * (Tb / T), Tb - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, Tb - 1)
    frac = (pos - i0)[:, None].astype(np.float32)
    return (1 - frac) * frames[i0] + frac * frames[i1]
