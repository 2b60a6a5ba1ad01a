"""Checkpoint files: namespaced parameter blobs plus training state.

A checkpoint is a plain dict saved with ``torch.save``:

``format_version``, ``config`` (plain dict), ``stage``, ``step``, ``completed``,
``speakers`` (registry order), ``params`` ({namespace: state_dict}),
``optimizers``, ``rng``, ``target_stats`` ({speaker: F0Stats dict}) and
``wreg_reference`` (frozen adaptation reference, adapt stage only).

Everything in it loads under ``torch.load(weights_only=True)``.
"""
from __future__ import annotations

import os
from pathlib import Path

import torch

from .config import Config
from .errors import CheckpointError
from .pitch import F0Stats

FORMAT_VERSION = 1
GENERATOR_NAMESPACES = ("speakers", "pbtc", "posterior", "prior", "flow", "decoder")
NAMESPACES = GENERATOR_NAMESPACES + ("disc",)


def split_namespaces(model: torch.nn.Module, names=GENERATOR_NAMESPACES) -> dict[str, dict]:
    """``state_dict`` of each named child module, detached and cloned."""
    out = {}
    for ns in names:
        child = getattr(model, ns)
        out[ns] = {k: v.detach().clone() for k, v in child.state_dict().items()}
    return out


def save_checkpoint(state: dict, path: str | os.PathLike) -> Path:
    """Atomically write ``state`` (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = dict(state)
    state.setdefault("format_version", FORMAT_VERSION)
    unknown = set(state.get("params", {})) - set(NAMESPACES)
    if unknown:
        raise CheckpointError(f"unknown parameter namespaces {sorted(unknown)}")
    tmp = path.with_name(f".{path.name}.tmp")
    torch.save(state, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike, namespaces=None) -> dict:
    """Load a checkpoint, optionally keeping only some parameter namespaces.

    With ``namespaces`` given, optimizer, RNG and reference state are dropped;
    this is the inference path.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # corrupted or foreign file
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or "format_version" not in state:
        raise CheckpointError(f"{path} is not a checkpoint")
    if state["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {state['format_version']}, this build reads {FORMAT_VERSION}")
    if namespaces is not None:
        missing = [ns for ns in namespaces if ns not in state.get("params", {})]
        if missing:
            raise CheckpointError(f"{path} lacks namespaces {missing}")
        state = {k: v for k, v in state.items()
                 if k not in ("optimizers", "rng", "wreg_reference", "scheduler")}
        state["params"] = {ns: state["params"][ns] for ns in namespaces}
    return state


def config_of(state: dict) -> Config:
    return Config.from_dict(state["config"])


def target_stats_of(state: dict) -> dict[str, F0Stats]:
    return {k: F0Stats.from_dict(v) for k, v in state.get("target_stats", {}).items()}


def load_into(model: torch.nn.Module, params: dict[str, dict], strict: bool = True) -> None:
    """Copy namespaced parameters into ``model``'s children of the same name."""
    for ns, sd in params.items():
        child = getattr(model, ns, None)
        if child is None:
            if strict:
                raise CheckpointError(f"model has no component '{ns}'")
            continue
        try:
            child.load_state_dict(sd)
        except RuntimeError as exc:
            raise CheckpointError(f"parameters for '{ns}' do not fit this model: {exc}") from exc


def generator_from_checkpoint(state: dict, cfg: Config | None = None):
    """Rebuild the generator-side model from a (possibly partial) checkpoint."""
    from .svc_model import SVCModel

    cfg = cfg or config_of(state)
    model = SVCModel(cfg, list(state.get("speakers", [])))
    load_into(model, {ns: sd for ns, sd in state["params"].items() if ns in GENERATOR_NAMESPACES})
    model.eval()
    return model
