"""Token error rate scoring with multi-reference assignment, activity-frame
accuracy, overlap-estimate scatter export, and JSON report generation.

Hypotheses from multi-channel decoding carry no speaker identity, so each
entry is scored under the permutation of hypothesis-to-reference pairing
with minimum total edit distance, padding with empty sequences when the
counts differ. Set-level rates aggregate error counts over the
single-speaker and overlapped subsets separately; the headline number is
the unweighted mean of the two set rates. The toy vocabulary has no word
segmentation, so rates are token-level throughout.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import FrontendConfig, featurize, read_wav
from .model import ModelBundle, ModelError, decode_mt, decode_st
from .overlap import DatasetManifest, labels_from_spans
from .sad import ProbeModel, conditioned_decode, estimate_overlap, infer_activity
from .transducer import DecodeStats

SET_SINGLE = "SingleSpkr"
SET_OVERLAP = "Overlap"


def edit_distance(ref, hyp):
    """Minimal (substitutions, deletions, insertions) turning hyp into ref.

    Ties prefer a substitution over a delete+insert pair.
    """
    R, H = len(ref), len(hyp)
    dp = np.zeros((R + 1, H + 1), dtype=np.int64)
    dp[:, 0] = np.arange(R + 1)
    dp[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            if ref[i - 1] == hyp[j - 1]:
                dp[i, j] = dp[i - 1, j - 1]
            else:
                dp[i, j] = 1 + min(dp[i - 1, j - 1], dp[i - 1, j], dp[i, j - 1])
    s = d = ins = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            s += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, d, ins


@dataclass
class AssignmentResult:
    permutation: tuple[int, ...]   # hypothesis index chosen for each reference
    total_edits: int
    per_pair: list[tuple[int, int, int]]


def assign_and_score(refs, hyps) -> AssignmentResult:
    """Min-total-edit pairing of hypotheses to references.

    Arity mismatches pad the shorter side with empty sequences, so an
    unmatched reference costs its full length in deletions and an
    unmatched hypothesis costs its length in insertions.
    """
    n = max(len(refs), len(hyps), 1)
    refs = list(refs) + [[] for _ in range(n - len(refs))]
    hyps = list(hyps) + [[] for _ in range(n - len(hyps))]
    best = None
    for perm in itertools.permutations(range(n)):
        pairs = [edit_distance(refs[i], hyps[perm[i]]) for i in range(n)]
        total = sum(sum(p) for p in pairs)
        if best is None or total < best[1]:
            best = (perm, total, pairs)
    return AssignmentResult(permutation=best[0], total_edits=best[1], per_pair=best[2])


@dataclass
class SetScores:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_tokens: int = 0
    num_utts: int = 0

    def add(self, pairs, ref_tokens):
        for s, d, i in pairs:
            self.substitutions += s
            self.deletions += d
            self.insertions += i
        self.ref_tokens += ref_tokens
        self.num_utts += 1

    @property
    def wer_pct(self):
        if self.ref_tokens == 0:
            return None
        errors = self.substitutions + self.deletions + self.insertions
        return 100.0 * errors / self.ref_tokens

    def to_dict(self):
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "ref_tokens": self.ref_tokens,
            "num_utts": self.num_utts,
            "wer_pct": self.wer_pct if self.wer_pct is not None else "n/a",
        }


@dataclass
class EvalReport:
    model_kind: str
    mode: str
    unit: str = "token"
    sets: dict = field(default_factory=dict)
    frame_accuracy: dict | None = None
    dispatch: dict | None = None
    decode_stats: dict = field(default_factory=dict)
    scatter: list = field(default_factory=list)

    @property
    def average_wer_pct(self):
        vals = [s.wer_pct for s in self.sets.values() if s.wer_pct is not None]
        if not vals:
            return None
        return sum(vals) / len(vals)

    def wer(self, set_name):
        return self.sets[set_name].wer_pct

    def to_dict(self):
        return {
            "model": self.model_kind,
            "mode": self.mode,
            "unit": self.unit,
            "sets": {name: s.to_dict() for name, s in sorted(self.sets.items())},
            "average_wer_pct": (self.average_wer_pct
                                if self.average_wer_pct is not None else "n/a"),
            "frame_accuracy": self.frame_accuracy,
            "dispatch": self.dispatch,
            "decode_stats": self.decode_stats,
            "num_scatter_rows": len(self.scatter),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _frame_accuracy(bundle, probe, feat, entry, frontend_cfg):
    wave_samples = int(round(entry.duration_s * frontend_cfg.sample_rate))
    labels = labels_from_spans(entry.spans, wave_samples, frontend_cfg.sample_rate,
                               feat.frame_rate)
    correct = total = 0
    tracks = []
    for m in (1, 2):
        track = infer_activity(bundle, probe, feat, m)
        pred = (track.probs > probe.activity_threshold).astype(np.int8)
        col = labels.labels[:, m - 1]
        correct += int((pred == col).sum())
        total += col.size
        tracks.append(track)
    return correct, total, tracks


def evaluate(bundle: ModelBundle, manifest: DatasetManifest, frontend_cfg: FrontendConfig,
             mode: str, probe: ProbeModel | None = None, threshold_s: float = 0.5,
             out_dir=None, gnuplot: bool = False) -> EvalReport:
    """Decode every entry under the given mode and aggregate per test set.

    mode "st" decodes the direct path once, "mt" runs one pass per channel,
    "conditioned" routes per utterance on the probe's overlap estimate
    (probe required). With a probe, activity-frame accuracy and the
    estimated-vs-actual overlap scatter are included.
    """
    if mode not in ("st", "mt", "conditioned"):
        raise ModelError(f"unknown evaluation mode: {mode}")
    if mode == "conditioned" and probe is None:
        raise ModelError("conditioned evaluation requires a probe")

    report = EvalReport(model_kind=bundle.wiring.kind, mode=mode)
    report.sets = {SET_SINGLE: SetScores(), SET_OVERLAP: SetScores()}
    stats = DecodeStats()
    frame_correct = frame_total = 0
    dispatch = {"single->single": 0, "single->overlapped": 0,
                "overlapped->single": 0, "overlapped->overlapped": 0}

    for entry in sorted(manifest.entries, key=lambda e: e.entry_id):
        feat = featurize(read_wav(manifest.audio_path(entry)), frontend_cfg)
        set_name = SET_SINGLE if entry.kind == "single" else SET_OVERLAP

        if mode == "st":
            hyps = [decode_st(bundle, feat, stats=stats)]
        elif mode == "mt":
            hyps = decode_mt(bundle, feat, stats=stats)
        else:
            routed = conditioned_decode(bundle, probe, feat, threshold_s=threshold_s,
                                        stats=stats)
            hyps = routed["outputs"]
            dispatch[f"{entry.kind}->{routed['mode']}"] += 1

        assignment = assign_and_score(entry.transcripts, hyps)
        report.sets[set_name].add(assignment.per_pair,
                                  sum(len(t) for t in entry.transcripts))

        if probe is not None:
            correct, total, tracks = _frame_accuracy(bundle, probe, feat, entry,
                                                     frontend_cfg)
            frame_correct += correct
            frame_total += total
            if entry.kind == "overlapped":
                est = estimate_overlap(tracks[0], tracks[1], probe.activity_threshold,
                                       threshold_s)
                report.scatter.append((entry.entry_id, est.overlap_s, entry.overlap_s))

    report.decode_stats = stats.as_dict()
    if probe is not None and frame_total:
        report.frame_accuracy = {"overall": frame_correct / frame_total,
                                 "frames": frame_total}
    if mode == "conditioned":
        report.dispatch = dispatch

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report.to_json())
        if report.scatter:
            lines = ["utt_id,estimated_overlap_s,actual_overlap_s"]
            lines += [f"{u},{est:.6f},{act:.6f}" for u, est, act in report.scatter]
            (out_dir / "scatter.csv").write_text("\n".join(lines) + "\n")
            if gnuplot:
                (out_dir / "scatter.gp").write_text(_gnuplot_script("scatter.csv"))
    return report


def _gnuplot_script(csv_name):
    return (
        "set datafile separator ','\n"
        "set xlabel 'estimated overlap (s)'\n"
        "set ylabel 'actual overlap (s)'\n"
        "set key off\n"
        f"plot '{csv_name}' every ::1 using 2:3 with points pt 7\n"
    )


def pearson_correlation(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 2 or xs.std() == 0 or ys.std() == 0:
        return 0.0
    return float(np.corrcoef(xs, ys)[0, 1])
