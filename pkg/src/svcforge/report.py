"""PNG figures written next to the text outputs (training logs, F0 sidecars)."""
from __future__ import annotations

import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pitch import F0Contour  # noqa: E402

_LOSS_KEYS = ("recon", "kl", "adv_g", "adv_d", "wreg")


def read_log(path: str | os.PathLike) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def plot_training_log(log_path: str | os.PathLike, out_path: str | os.PathLike | None = None) -> Path:
    """One panel per loss term against step; default output is ``<log>.png``."""
    records = read_log(log_path)
    out = Path(out_path) if out_path else Path(log_path).with_suffix(".png")
    keys = [k for k in _LOSS_KEYS if any(k in r for r in records)]
    fig, axes = plt.subplots(len(keys) or 1, 1, figsize=(7, 1.8 * max(len(keys), 1)), sharex=True,
                             squeeze=False)
    steps = [r["step"] for r in records]
    for ax, key in zip(axes[:, 0], keys):
        ax.plot(steps, [r.get(key, np.nan) for r in records], lw=1)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("step")
    if records:
        axes[0, 0].set_title(f"{records[0].get('stage', '')} losses")
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def plot_f0(c: F0Contour, out_path: str | os.PathLike) -> Path:
    t = np.arange(len(c.f0_hz)) * c.hop_seconds
    f = np.where(c.voiced, c.f0_hz, np.nan)
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, f, lw=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("F0 (Hz)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)
