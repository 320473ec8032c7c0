"""Deterministic training loops over manifest data, with JSONL metrics."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np

from .frontend import FrontendConfig, featurize, read_wav
from .model import (
    ModelBundle,
    ModelError,
    forward_mt_baseline,
    forward_mt_cascade,
    forward_single_talker,
)
from .nn import tensor as T
from .nn.optim import ScheduleConfig, adam_step, lr_at
from .overlap import DatasetManifest


@dataclass
class TrainResult:
    losses: list[float]
    branch_counts: dict[str, int]
    resampled: int


def load_features(manifest: DatasetManifest, cfg: FrontendConfig):
    """Featurize every entry once; training re-reads nothing from disk.

    Frames are cast to float32, the training compute dtype.
    """
    feats = []
    for entry in manifest.entries:
        wave = read_wav(manifest.audio_path(entry))
        feat = featurize(wave, cfg)
        feat.frames = feat.frames.astype(np.float32)
        feats.append(feat)
    return feats


def _emit_metrics(record, metrics_file, echo_stderr):
    line = json.dumps(record, sort_keys=True)
    if metrics_file is not None:
        metrics_file.write(line + "\n")
    if echo_stderr:
        print(line, file=sys.stderr)


def train_model(bundle: ModelBundle, manifest: DatasetManifest, frontend_cfg: FrontendConfig,
                schedule: ScheduleConfig, steps: int, batch_size: int, seed: int,
                metrics_path=None, echo_stderr=False, max_steps_override=None) -> TrainResult:
    """Run Adam over shuffled mini-batches for the bundle's wiring.

    single_talker trains on single-speaker entries only; mt wirings use
    every entry. Fixed seed gives a bit-identical loss trajectory.
    """
    kind = bundle.wiring.kind
    if kind == "single_talker":
        usable = [i for i, e in enumerate(manifest.entries) if e.kind == "single"]
        if not usable:
            raise ModelError("single_talker training needs single-speaker entries")
    else:
        usable = list(range(len(manifest.entries)))
        if not usable:
            raise ModelError("empty manifest")

    feats = load_features(manifest, frontend_cfg)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    branch_rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))

    losses = []
    branch_counts = {"audio": 0, "mask": 0}
    resampled_total = 0
    metrics_file = open(metrics_path, "w") if metrics_path is not None else None
    try:
        order: list[int] = []
        total_steps = steps if max_steps_override is None else max_steps_override
        for step in range(total_steps):
            while len(order) < batch_size:
                order.extend(batch_rng.permutation(len(usable)).tolist())
            batch = [usable[j] for j in order[:batch_size]]
            order = order[batch_size:]

            loss_nodes = []
            step_branches = []
            for idx in batch:
                entry = manifest.entries[idx]
                feat = feats[idx]
                if kind == "single_talker":
                    node, report = forward_single_talker(bundle, feat, entry.transcripts[0],
                                                         step=step)
                elif kind == "mt_baseline":
                    node, report = forward_mt_baseline(bundle, feat, entry.transcripts,
                                                       step=step)
                else:
                    node, report = forward_mt_cascade(bundle, feat, entry.transcripts,
                                                      entry.kind, branch_rng, step=step)
                # normalize by alignment length so long mixtures do not
                # dominate the batch gradient
                denom = feat.num_frames + sum(len(t) for t in entry.transcripts) + 1
                loss_nodes.append(T.mul(node, 1.0 / denom))
                step_branches.append(report.branch_taken)
                branch_counts[report.branch_taken] += 1
                resampled_total += int(report.resampled)

            total = loss_nodes[0]
            for node in loss_nodes[1:]:
                total = T.add(total, node)
            mean_loss = T.mul(total, 1.0 / len(loss_nodes))
            mean_loss.backward()
            lr = lr_at(step, schedule)
            adam_step(bundle.store, lr, t=step + 1)

            loss_val = float(mean_loss.item())
            losses.append(loss_val)
            if len(set(step_branches)) == 1:
                branch = step_branches[0]
            else:
                branch = "mixed"
            _emit_metrics({"step": step, "L_t": loss_val, "branch": branch, "lr": lr},
                          metrics_file, echo_stderr)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return TrainResult(losses=losses, branch_counts=branch_counts, resampled=resampled_total)
