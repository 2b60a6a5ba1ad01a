"""Three-stage training: warm-up on speech, pre-training on singing, adaptation.

Each stage alternates one discriminator and one generator Adam update per
step, logs losses as JSON lines and writes ``<out_dir>/<stage>.ckpt``.  With
``training.checkpoint_every > 0`` it also keeps ``<stage>.last.ckpt`` so that
an interrupted stage resumes where it stopped and reproduces the same losses.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio_io import mel_torch
from .checkpoint import (GENERATOR_NAMESPACES, config_of, load_checkpoint, load_into, save_checkpoint,
                         split_namespaces)
from .config import Config
from .content import build_encoder
from .data import FeatureStore, ManifestEntry, collate, read_manifest
from .errors import CheckpointError, ConfigError, NonFiniteLossError, NoVoicedFramesError
from .losses import (LossReport, adv_d, adv_g, feature_matching, kl_loss, recon_loss, snapshot, total_d,
                     total_g, weight_reg)
from .perturb import AugmentationSpec
from .pitch import F0Stats, f0_statistics
from .svc_model import SVCModel, build_discriminator

log = logging.getLogger(__name__)

STAGES = ("warmup", "pretrain", "adapt")


@dataclass
class StageConfig:
    stage: str
    manifest: Path
    steps: int
    out_dir: Path
    batch_size: int | None = None  # None: training.batch_size
    learning_rate: float | None = None
    adam_betas: tuple[float, float] | None = None
    augmentation: AugmentationSpec | None = None
    wreg_lambda: float = 0.0
    init_from: Path | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage '{self.stage}', expected one of {STAGES}")
        self.manifest = Path(self.manifest)
        self.out_dir = Path(self.out_dir)
        self.init_from = Path(self.init_from) if self.init_from else None
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.stage == "adapt" and self.init_from is None:
            raise ConfigError("the adapt stage needs init_from (a pre-trained checkpoint)")
        if self.wreg_lambda < 0:
            raise ConfigError("wreg_lambda must be >= 0")
        if self.wreg_lambda > 0 and self.stage != "adapt":
            raise ConfigError("weight regularisation applies to the adapt stage only")

    @classmethod
    def from_config(cls, stage: str, cfg: Config, manifest, out_dir, init_from=None, steps=None,
                    augment: bool | None = None, wreg_lambda: float | None = None) -> "StageConfig":
        """Stage defaults from the config: adaptation gets augmentation and ``losses.wreg_lambda``."""
        adapt = stage == "adapt"
        if steps is None:
            steps = getattr(cfg.training, f"{stage}_steps")
        augment = adapt if augment is None else augment
        spec = AugmentationSpec.from_config(cfg.perturb) if augment else None
        lam = (cfg.losses.wreg_lambda if adapt else 0.0) if wreg_lambda is None else wreg_lambda
        return cls(stage, manifest, steps, out_dir, augmentation=spec, wreg_lambda=lam, init_from=init_from)

    @property
    def final_path(self) -> Path:
        return self.out_dir / f"{self.stage}.ckpt"

    @property
    def last_path(self) -> Path:
        return self.out_dir / f"{self.stage}.last.ckpt"

    @property
    def log_path(self) -> Path:
        return self.out_dir / f"{self.stage}.log.jsonl"


def compute_target_stats_entries(entries: list[ManifestEntry], store: FeatureStore) -> dict[str, F0Stats]:
    """Pooled voiced log-F0 statistics per speaker."""
    by_speaker: dict[str, list] = {}
    for e in entries:
        by_speaker.setdefault(e.speaker, []).append(store.f0(e))
    out = {}
    for spk, contours in by_speaker.items():
        try:
            out[spk] = f0_statistics(contours)
        except NoVoicedFramesError:
            log.warning("speaker %s has no voiced frames; no target F0 statistics stored", spk)
    return out


def _rng_state(gen: torch.Generator, np_rng: np.random.Generator) -> dict:
    return {"torch": torch.get_rng_state(), "generator": gen.get_state(),
            "numpy": np_rng.bit_generator.state}


def _restore_rng(state: dict, gen: torch.Generator, np_rng: np.random.Generator) -> None:
    torch.set_rng_state(state["torch"])
    gen.set_state(state["generator"])
    np_rng.bit_generator.state = state["numpy"]


def _stage_seed(cfg: Config, stage: str) -> int:
    return int(cfg.seed) + 1000 * STAGES.index(stage)


def _wreg_params(model: SVCModel, scope: str):
    for name, p in model.named_parameters():
        if scope == "adapted" and name.startswith("speakers."):
            continue
        yield name, p


def parameter_drift(state: dict) -> float:
    """||theta - theta_ref|| between a finished adapt checkpoint and its frozen reference."""
    ref = state.get("wreg_reference")
    if not ref:
        raise CheckpointError("checkpoint carries no adaptation reference")
    flat = {f"{ns}.{k}": v for ns in GENERATOR_NAMESPACES for k, v in state["params"][ns].items()}
    total = 0.0
    for name, r in ref.items():
        total += float(torch.sum((flat[name].double() - r.double()) ** 2))
    return math.sqrt(total)


class _Stage:
    """Mutable state of one running stage."""

    def __init__(self, sc: StageConfig, cfg: Config):
        self.sc = sc
        self.cfg = cfg
        self.entries = read_manifest(sc.manifest)
        self.store = FeatureStore(cfg, build_encoder(cfg))
        seed = _stage_seed(cfg, sc.stage)
        torch.manual_seed(seed)
        self.gen = torch.Generator().manual_seed(seed)
        self.np_rng = np.random.default_rng(seed)
        self.step = 0
        self.target_stats: dict[str, dict] = {}
        self.reference: dict[str, torch.Tensor] | None = None

        init = load_checkpoint(sc.init_from) if sc.init_from else None
        speakers = list(init["speakers"]) if init else []
        self.model = SVCModel(cfg, speakers)
        self.disc = build_discriminator(cfg)
        if init is not None:
            load_into(self.model, {ns: init["params"][ns] for ns in GENERATOR_NAMESPACES})
            if "disc" in init["params"] and not cfg.training.reset_discriminator_per_stage:
                load_into(self, {"disc": init["params"]["disc"]})
            self.target_stats = dict(init.get("target_stats", {}))
        self.model.speakers.register(sorted({e.speaker for e in self.entries}))
        if sc.stage == "adapt":
            self.reference = snapshot(_wreg_params(self.model, cfg.losses.wreg_scope))

        t = cfg.training
        lr = sc.learning_rate or t.learning_rate
        betas = tuple(sc.adam_betas or t.adam_betas)
        self.opt_g = torch.optim.Adam(self.model.parameters(), lr, betas=betas, eps=t.adam_eps)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr, betas=betas, eps=t.adam_eps)
        self.scheds = []
        if t.lr_decay:
            self.scheds = [torch.optim.lr_scheduler.ExponentialLR(o, t.lr_decay) for o in (self.opt_g, self.opt_d)]

    # -- persistence

    def state(self, completed: bool) -> dict:
        params = split_namespaces(self.model)
        params["disc"] = {k: v.detach().clone() for k, v in self.disc.state_dict().items()}
        st = {"config": self.cfg.to_dict(), "stage": self.sc.stage, "step": self.step,
              "completed": completed, "speakers": list(self.model.speakers.ids), "params": params,
              "optimizers": {"g": self.opt_g.state_dict(), "d": self.opt_d.state_dict()},
              "scheduler": [s.state_dict() for s in self.scheds],
              "rng": _rng_state(self.gen, self.np_rng), "target_stats": self.target_stats}
        if self.reference is not None:
            st["wreg_reference"] = self.reference
        return st

    def restore(self, st: dict) -> None:
        self.model.speakers.register(st["speakers"])
        load_into(self.model, {ns: st["params"][ns] for ns in GENERATOR_NAMESPACES})
        load_into(self, {"disc": st["params"]["disc"]})
        self.opt_g.load_state_dict(st["optimizers"]["g"])
        self.opt_d.load_state_dict(st["optimizers"]["d"])
        if self.scheds:
            self.scheds = [torch.optim.lr_scheduler.ExponentialLR(o, self.cfg.training.lr_decay)
                           for o in (self.opt_g, self.opt_d)]
            for s, sd in zip(self.scheds, st.get("scheduler", [])):
                s.load_state_dict(sd)
        _restore_rng(st["rng"], self.gen, self.np_rng)
        self.step = int(st["step"])
        self.target_stats = dict(st.get("target_stats", {}))
        if "wreg_reference" in st:
            self.reference = st["wreg_reference"]

    # -- one update

    def batch(self) -> dict[str, torch.Tensor]:
        n = self.sc.batch_size or self.cfg.training.batch_size
        idx = self.np_rng.choice(len(self.entries), size=n, replace=len(self.entries) < n)
        examples = [self.store.training_example(self.entries[i], self.np_rng, self.sc.augmentation)
                    for i in idx]
        return collate(examples, self.model.speakers.index, self.cfg.frames_per_segment)

    def train_step(self) -> LossReport:
        cfg, hop, seg = self.cfg, self.cfg.audio.hop_length, self.cfg.frames_per_segment
        b = self.batch()
        out = self.model(b["spec"], b["lengths"], b["bnf"], b["bins"], b["f0_samples"], b["speaker"], seg,
                         generator=self.gen)
        y = torch.stack([b["wav"][i, :, int(s) * hop:(int(s) + seg) * hop] for i, s in enumerate(out["starts"])])
        y_hat = out["y_hat"]

        real, _ = self.disc(y)
        fake, _ = self.disc(y_hat.detach())
        loss_d = total_d(adv_d(real, fake))
        if not torch.isfinite(loss_d):
            self.abort(LossReport(adv_d=float(loss_d), total_d=float(loss_d)))
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_d.step()

        fake, fmap_fake = self.disc(y_hat)
        recon = recon_loss(mel_torch(y.squeeze(1), cfg.audio), mel_torch(y_hat.squeeze(1), cfg.audio))
        kl = kl_loss(out["q"], out["z"], out["z_p"], out["logdet"], out["p"], out["x_mask"])
        ag = adv_g(fake)
        fm = torch.zeros(())
        if cfg.losses.use_feature_matching:
            _, fmap_real = self.disc(y)
            fm = feature_matching(fmap_real, fmap_fake)
        wreg = torch.zeros(())
        if self.reference is not None and self.sc.wreg_lambda > 0:
            wreg = weight_reg(self.reference, _wreg_params(self.model, cfg.losses.wreg_scope))
        L = cfg.losses
        loss_g = total_g(ag, recon, kl, wreg, self.sc.wreg_lambda, fm, L.recon_weight, L.kl_weight,
                         L.fm_weight if L.use_feature_matching else 0.0)
        report = LossReport(*(float(v.detach()) for v in (recon, kl, ag, loss_d, wreg, fm, loss_g, loss_d)))
        if not report.is_finite():
            self.abort(report)
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        for s in self.scheds:
            s.step()
        self.step += 1
        return report

    def abort(self, report: LossReport):
        path = self.sc.out_dir / f"{self.sc.stage}.nonfinite.ckpt"
        st = self.state(completed=False)
        st["losses"] = report.as_dict()
        save_checkpoint(st, path)
        raise NonFiniteLossError(f"non-finite loss at {self.sc.stage} step {self.step + 1}: "
                                 f"{report.as_dict()}; diagnostic checkpoint at {path}")


def _truncate_log(path: Path, step: int) -> None:
    if not path.exists():
        return
    keep = [line for line in path.read_text().splitlines() if line.strip() and json.loads(line)["step"] <= step]
    path.write_text("".join(line + "\n" for line in keep))


def run_stage(sc: StageConfig, cfg: Config, resume: bool = True) -> dict:
    """Run one stage and return its final checkpoint state."""
    sc.out_dir.mkdir(parents=True, exist_ok=True)
    if resume and sc.final_path.exists():
        done = load_checkpoint(sc.final_path)
        if done.get("completed") and done["step"] == sc.steps and done["stage"] == sc.stage:
            log.info("%s already complete at %s", sc.stage, sc.final_path)
            return done
    st = _Stage(sc, cfg)
    if resume and sc.last_path.exists():
        last = load_checkpoint(sc.last_path)
        if last["stage"] == sc.stage and last["step"] <= sc.steps:
            st.restore(last)
            log.info("resuming %s from step %d", sc.stage, st.step)
    if st.step == 0:
        if sc.log_path.exists():
            sc.log_path.unlink()
        # fresh stage: record target F0 statistics of this manifest's speakers
        stats = compute_target_stats_entries(st.entries, st.store)
        st.target_stats.update({k: v.to_dict() for k, v in stats.items()})
    else:
        _truncate_log(sc.log_path, st.step)

    every = cfg.training.checkpoint_every
    with open(sc.log_path, "a") as fh:
        while st.step < sc.steps:
            report = st.train_step()
            if st.step % max(cfg.training.log_every, 1) == 0 or st.step == sc.steps:
                rec = {"stage": sc.stage, "step": st.step, **report.as_dict(),
                       "lr": st.opt_g.param_groups[0]["lr"]}
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if every and st.step % every == 0 and st.step < sc.steps:
                save_checkpoint(st.state(completed=False), sc.last_path)

    final = st.state(completed=True)
    save_checkpoint(final, sc.final_path)
    if sc.last_path.exists():
        sc.last_path.unlink()
    if cfg.training.plot_losses and sc.log_path.stat().st_size > 0:
        from .report import plot_training_log
        plot_training_log(sc.log_path)
    return final


def run_pipeline(warmup: StageConfig, pretrain: StageConfig, adapt: StageConfig, cfg: Config,
                 resume: bool = True) -> dict:
    """warm-up -> pre-training -> adaptation, each initialised from the previous stage's output."""
    order = [("warmup", warmup), ("pretrain", pretrain), ("adapt", adapt)]
    for name, sc in order:
        if sc.stage != name:
            raise ConfigError(f"pipeline slot '{name}' received a '{sc.stage}' stage")
    run_stage(warmup, cfg, resume)
    pretrain = dataclasses.replace(pretrain, init_from=warmup.final_path)
    run_stage(pretrain, cfg, resume)
    adapt = dataclasses.replace(adapt, init_from=pretrain.final_path)
    return run_stage(adapt, cfg, resume)


def read_log(path: str | os.PathLike) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def stage_config_from_checkpoint(path: str | os.PathLike) -> Config:
    return config_of(load_checkpoint(path))
