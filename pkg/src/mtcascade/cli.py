"""Command-line surface: simulate, pretrain, train, probe-train, decode,
evaluate.

Every subcommand takes an optional JSON config file with flags winning
over file values, honors --seed for determinism, writes artifacts under
the given output paths, and logs line-delimited JSON to stderr. Exit
codes: 0 ok, 2 config error, 3 I/O error, 4 model/geometry mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .evaluate import evaluate
from .frontend import FrontendError, featurize, read_wav
from .model import (
    GeometryError,
    ModelError,
    build_model,
    decode_mt,
    decode_st,
    load_audio_encoder,
    load_bundle,
    save_bundle,
)
from .nn.checkpoint import CheckpointError
from .nn.optim import ScheduleConfig
from .overlap import OverlapError, build_dataset, load_manifest
from .sad import ProbeConfig, conditioned_decode, load_probe, save_probe, train_probe
from .training import train_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MODEL = 4

WIRING_FLAG_TO_KIND = {
    "st": "single_talker",
    "mt-baseline": "mt_baseline",
    "mt-cascade": "mt_cascade",
}


def _log(**record):
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def _nonnegative_int(value):
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {n}")
    return n


def _positive_int(value):
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {n}")
    return n


def _common_flags(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--profile", choices=["toy", "paper"], default=None)
    p.add_argument("--seed", type=int, default=None)


def _resolve_config(args, extra=None):
    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(path=args.config, profile=args.profile, overrides=overrides)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mtcascade",
        description="Overlapped-speech simulation, multi-talker transducer "
                    "training, activity probing, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a toy dataset and manifest")
    _common_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train")
    p.add_argument("--n-single", type=_nonnegative_int, default=50)
    p.add_argument("--n-overlap", type=_nonnegative_int, default=50)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pretrain", help="train a single-talker model on "
                                        "single-speaker entries")
    _common_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=_positive_int, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--metrics", help="JSONL metrics path (default <out>.metrics.jsonl)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train an mt wiring on a mixed manifest")
    _common_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--wiring", choices=sorted(WIRING_FLAG_TO_KIND), default="mt-cascade")
    p.add_argument("--lambda", dest="lambda_rate", type=float, default=None,
                   help="audio-branch sampling rate for mt-cascade")
    p.add_argument("--init-audio-from", help="load audio-encoder tensors from "
                                             "this checkpoint before training")
    p.add_argument("--steps", type=_positive_int, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--metrics", help="JSONL metrics path (default <out>.metrics.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe-train", help="fit the activity probe on a "
                                           "frozen mt bundle")
    _common_flags(p)
    p.add_argument("--bundle", required=True, help="trained mt checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="probe checkpoint path")
    p.add_argument("--insertion-layer", type=int, default=-1)
    p.add_argument("--theta", type=float, default=0.5,
                   help="per-frame activity threshold")
    p.add_argument("--steps", type=_positive_int, default=400)
    p.set_defaults(func=cmd_probe_train)

    p = sub.add_parser("decode", help="decode a manifest to hypotheses JSONL")
    _common_flags(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="hypotheses JSONL path")
    p.add_argument("--mode", choices=["st", "mt", "conditioned"], default="st")
    p.add_argument("--probe", help="probe checkpoint (conditioned mode)")
    p.add_argument("--threshold-s", type=float, default=0.5)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="score a bundle on a manifest")
    _common_flags(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--mode", choices=["st", "mt", "conditioned"], default="mt")
    p.add_argument("--probe", help="probe checkpoint (enables frame accuracy "
                                   "and scatter; required for conditioned)")
    p.add_argument("--threshold-s", type=float, default=0.5)
    p.add_argument("--gnuplot", action="store_true",
                   help="emit a gnuplot script next to the scatter CSV")
    p.set_defaults(func=cmd_evaluate)

    return parser


def cmd_simulate(args):
    cfg = _resolve_config(args)
    manifest_path = build_dataset(args.out, n_single=args.n_single,
                                  n_overlap=args.n_overlap, seed=cfg.seed,
                                  split=args.split, corpus_cfg=cfg.corpus)
    _log(event="simulate", manifest=str(manifest_path),
         n_single=args.n_single, n_overlap=args.n_overlap, seed=cfg.seed)
    return EXIT_OK


def _run_training(args, wiring_kind, manifest, cfg, init_audio_from=None):
    bundle = build_model(cfg.wiring(wiring_kind), seed=cfg.seed)
    if init_audio_from:
        count = load_audio_encoder(bundle, init_audio_from)
        fresh = sum(1 for n in bundle.store.params if n.startswith("mask_encoder."))
        _log(event="init-audio-from", checkpoint=str(init_audio_from),
             audio_tensors_loaded=count, mask_tensors_fresh=fresh)
    steps = args.steps if args.steps is not None else cfg.steps
    batch = args.batch_size if args.batch_size is not None else cfg.batch_size
    if args.steps is None:
        schedule = cfg.schedule()
    else:
        schedule = ScheduleConfig(warmup_steps=min(cfg.warmup_steps, steps),
                                  peak_lr=cfg.peak_lr, total_steps=steps,
                                  floor_lr=cfg.floor_lr)
    metrics = args.metrics or f"{args.out}.metrics.jsonl"
    result = train_model(bundle, manifest, cfg.frontend, schedule, steps=steps,
                         batch_size=batch, seed=cfg.seed, metrics_path=metrics,
                         echo_stderr=True)
    save_bundle(bundle, args.out)
    _log(event="trained", wiring=wiring_kind, steps=steps,
         final_loss=result.losses[-1] if result.losses else None,
         checkpoint=str(args.out), metrics=str(metrics),
         branch_counts=result.branch_counts, resampled=result.resampled)
    return EXIT_OK


def cmd_pretrain(args):
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    return _run_training(args, "single_talker", manifest, cfg)


def cmd_train(args):
    extra = {}
    if args.lambda_rate is not None:
        if not (0.0 <= args.lambda_rate <= 1.0):
            raise ConfigError(f"--lambda must be in [0, 1], got {args.lambda_rate}")
        extra["lambda_rate"] = args.lambda_rate
    cfg = _resolve_config(args, extra)
    manifest = load_manifest(args.manifest)
    kind = WIRING_FLAG_TO_KIND[args.wiring]
    return _run_training(args, kind, manifest, cfg, init_audio_from=args.init_audio_from)


def cmd_probe_train(args):
    cfg = _resolve_config(args)
    bundle = load_bundle(args.bundle)
    manifest = load_manifest(args.manifest)
    probe_cfg = ProbeConfig(insertion_layer=args.insertion_layer,
                            activity_threshold=args.theta,
                            max_steps=args.steps, seed=cfg.seed)
    probe, history = train_probe(bundle, manifest, cfg.frontend, probe_cfg)
    save_probe(probe, args.out)
    _log(event="probe-trained", steps=len(history),
         final_loss=history[-1] if history else None, checkpoint=str(args.out))
    return EXIT_OK


def cmd_decode(args):
    cfg = _resolve_config(args)
    bundle = load_bundle(args.bundle)
    manifest = load_manifest(args.manifest)
    probe = load_probe(args.probe) if args.probe else None
    if args.mode == "conditioned" and probe is None:
        raise ConfigError("conditioned decode requires --probe")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        for entry in sorted(manifest.entries, key=lambda e: e.entry_id):
            feat = featurize(read_wav(manifest.audio_path(entry)), cfg.frontend)
            if args.mode == "st":
                record = {"id": entry.entry_id, "mode": "st",
                          "outputs": [decode_st(bundle, feat)]}
            elif args.mode == "mt":
                record = {"id": entry.entry_id, "mode": "mt",
                          "outputs": decode_mt(bundle, feat)}
            else:
                routed = conditioned_decode(bundle, probe, feat,
                                            threshold_s=args.threshold_s)
                record = {"id": entry.entry_id, "mode": routed["mode"],
                          "outputs": routed["outputs"],
                          "estimated_overlap_s": routed["estimate"].overlap_s}
            f.write(json.dumps(record, sort_keys=True) + "\n")
    _log(event="decoded", manifest=str(args.manifest), out=str(out_path),
         mode=args.mode, entries=len(manifest.entries))
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _resolve_config(args)
    if args.mode == "conditioned" and not args.probe:
        raise ConfigError("conditioned evaluation requires --probe")
    bundle = load_bundle(args.bundle)
    manifest = load_manifest(args.manifest)
    probe = load_probe(args.probe) if args.probe else None
    report = evaluate(bundle, manifest, cfg.frontend, mode=args.mode, probe=probe,
                      threshold_s=args.threshold_s, out_dir=args.out,
                      gnuplot=args.gnuplot)
    _log(event="evaluated", mode=args.mode, out=str(args.out),
         average_wer_pct=report.average_wer_pct)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(event="error", kind="config", message=str(exc))
        return EXIT_CONFIG
    except (GeometryError, ModelError, CheckpointError) as exc:
        _log(event="error", kind="model", message=str(exc))
        return EXIT_MODEL
    except (OverlapError, FrontendError) as exc:
        _log(event="error", kind="config", message=str(exc))
        return EXIT_CONFIG
    except (FileNotFoundError, OSError) as exc:
        _log(event="error", kind="io", message=str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
