"""``svcforge`` command line.

Every subcommand prints one JSON record on stdout when it succeeds.  On
failure it prints ``{"error": <code>, "type": ..., "message": ...}`` on stderr
and exits with status 2 (expected errors) or 1 (anything else).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import SvcError

GLOBAL_FLAGS = ("config", "seed", "profile")


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="YAML config file")
    parser.add_argument("--seed", type=int, default=d, help="override the config seed")
    parser.add_argument("--profile", choices=("desk", "vits"), default=d, help="built-in size profile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svcforge", description="Singing voice conversion toolkit.")
    _globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _globals(p, suppress=True)
        return p

    for stage in ("warmup", "pretrain", "adapt"):
        p = add(stage, f"run the {stage} training stage")
        p.add_argument("--manifest", required=True, help="TSV: wav, speaker[, f0 sidecar[, bnf sidecar]]")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--steps", type=int)
        p.add_argument("--init-from", required=stage == "adapt", help="checkpoint to start from")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints in out-dir")
        if stage == "adapt":
            p.add_argument("--wreg-lambda", type=float)
            p.add_argument("--no-augment", action="store_true")

    p = add("convert", "convert a clip to a target speaker")
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--speaker", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-f0-shift", action="store_true")

    p = add("extract-f0", "write an F0 sidecar")
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also render the contour to this PNG")

    p = add("extract-bnf", "write a BNF sidecar with the configured content encoder")
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--out", required=True)

    p = add("augment", "apply the adaptation-time augmentation chain")
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--out", required=True)

    p = add("stats", "pooled log-F0 statistics of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--speaker")

    p = add("make-corpus", "write a synthetic corpus and its manifest")
    p.add_argument("--kind", choices=("speech", "singing", "harmonic"), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--speakers", nargs="+", default=["spk0=mid"], help="id=voice, voice in low|mid|high|bright")
    p.add_argument("--clips", type=int, default=4)
    p.add_argument("--seconds", type=float, default=1.0)
    return parser


def _config(args):
    from .config import load_config

    cfg = load_config(args.config, args.profile)
    if args.seed is not None:
        cfg = cfg.updated({"seed": args.seed})
    return cfg


def cmd_stage(args) -> dict:
    from .training import StageConfig, run_stage

    cfg = _config(args)
    extra = {}
    if args.command == "adapt":
        extra = {"wreg_lambda": args.wreg_lambda, "augment": not args.no_augment}
    sc = StageConfig.from_config(args.command, cfg, args.manifest, args.out_dir, init_from=args.init_from,
                                 steps=args.steps, **extra)
    if args.batch_size:
        sc.batch_size = args.batch_size
    state = run_stage(sc, cfg, resume=not args.no_resume)
    rec = {"stage": sc.stage, "checkpoint": str(sc.final_path), "steps": state["step"],
           "speakers": state["speakers"], "log": str(sc.log_path)}
    png = sc.log_path.with_suffix(".png")
    if png.exists():
        rec["plot"] = str(png)
    return rec


def cmd_convert(args) -> dict:
    from .convert import ConversionRequest, Converter, convert

    conv = Converter(args.ckpt)
    seed = args.seed if args.seed is not None else conv.cfg.seed
    req = ConversionRequest(Path(args.source), args.speaker, Path(args.ckpt), seed, not args.no_f0_shift,
                            Path(args.out))
    out = convert(req, conv)
    return {"output": args.out, "samples": len(out), "sample_rate": out.sample_rate,
            "warnings": out.meta.get("warnings", [])}


def cmd_extract_f0(args) -> dict:
    from .audio_io import load_wav
    from .pitch import extract_f0_cfg, write_f0

    cfg = _config(args)
    c = extract_f0_cfg(load_wav(args.source, cfg.audio.sample_rate), cfg)
    write_f0(c, args.out)
    rec = {"output": args.out, "frames": len(c.f0_hz), "voiced": int(c.voiced.sum()),
           "hop_seconds": c.hop_seconds}
    if args.plot:
        from .report import plot_f0
        rec["plot"] = str(plot_f0(c, args.plot))
    return rec


def cmd_extract_bnf(args) -> dict:
    from .audio_io import load_wav
    from .content import build_encoder, extract_bnf, write_bnf

    cfg = _config(args)
    enc = build_encoder(cfg)
    b = extract_bnf(load_wav(args.source, cfg.audio.sample_rate), enc, args.source)
    write_bnf(b, args.out)
    return {"output": args.out, "frames": len(b), "dim": b.dim, "encoder": b.encoder_id}


def cmd_augment(args) -> dict:
    from .audio_io import load_wav, save_wav
    from .perturb import AugmentationSpec, augment

    cfg = _config(args)
    out = augment(load_wav(args.source, cfg.audio.sample_rate), AugmentationSpec.from_config(cfg.perturb),
                  np.random.default_rng(cfg.seed))
    save_wav(out, args.out)
    return {"output": args.out, "samples": len(out), "params": out.meta}


def cmd_stats(args) -> dict:
    from .convert import compute_target_stats

    s = compute_target_stats(args.manifest, _config(args), args.speaker)
    return s.to_dict()


def cmd_make_corpus(args) -> dict:
    from .synthetic import make_corpus

    cfg = _config(args)
    speakers = dict(s.split("=", 1) if "=" in s else (s, "mid") for s in args.speakers)
    m = make_corpus(args.out_dir, args.kind, speakers, args.clips, args.seconds, cfg.seed,
                    cfg.audio.sample_rate)
    return {"manifest": str(m), "clips": args.clips * len(speakers)}


COMMANDS = {"warmup": cmd_stage, "pretrain": cmd_stage, "adapt": cmd_stage, "convert": cmd_convert,
            "extract-f0": cmd_extract_f0, "extract-bnf": cmd_extract_bnf, "augment": cmd_augment,
            "stats": cmd_stats, "make-corpus": cmd_make_corpus}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rec = COMMANDS[args.command](args)
    except SvcError as exc:
        _error(exc.code, exc)
        return 2
    except (OSError, ValueError) as exc:
        _error("invalid_input", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        _error("internal_error", exc)
        return 1
    print(json.dumps({"command": args.command, **rec}, default=str))
    return 0


def _error(code: str, exc: Exception) -> None:
    print(json.dumps({"error": code, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
