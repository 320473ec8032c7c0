"""Simulated two-speaker overlap: mixing, activity labels, dataset builds.

A mixture is made by offsetting the second utterance so the two spans
intersect for the requested duration, then adding the waveforms at unity
gain. Each entry keeps both reference transcripts, both spans, and the
overlap interval; frame-level activity labels derive from the spans.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import FrontendError, Waveform, write_wav
from .tones import ToneCorpusConfig, sample_token_sequence, synth_tone_utterance

# Overlap targets follow the uniform shape of the full-scale recipe
# (0.5..4.0 s) compressed to toy utterance lengths. The floor stays above
# the 0.5 s dispatch threshold so every overlapped entry is genuinely
# above-threshold; see SCALE_NOTE recorded in manifests.
PAPER_OVERLAP_RANGE_S = (0.5, 4.0)
TOY_OVERLAP_RANGE_S = (0.7, 1.4)
SCALE_NOTE = "uniform overlap range compressed from (0.5, 4.0) s; floor kept above the 0.5 s dispatch threshold"


class OverlapError(ValueError):
    pass


@dataclass
class OverlapMixture:
    mixed: Waveform
    transcript_1: list[int]
    transcript_2: list[int]
    span_1: tuple[float, float]
    span_2: tuple[float, float]
    overlap: tuple[float, float]

    @property
    def overlap_s(self) -> float:
        return max(0.0, self.overlap[1] - self.overlap[0])


@dataclass
class FrameActivityLabels:
    labels: np.ndarray  # (T, M) in {0, 1}
    frame_rate: float

    @property
    def num_frames(self) -> int:
        return self.labels.shape[0]


@dataclass
class ManifestEntry:
    entry_id: str
    audio: str               # path relative to the manifest
    kind: str                # "single" | "overlapped"
    transcripts: list[list[int]]
    spans: list[tuple[float, float]]
    overlap: tuple[float, float] | None
    duration_s: float

    def to_json(self) -> str:
        payload = {
            "id": self.entry_id,
            "audio": self.audio,
            "kind": self.kind,
            "transcripts": self.transcripts,
            "spans": [list(s) for s in self.spans],
            "overlap": list(self.overlap) if self.overlap is not None else None,
            "duration_s": self.duration_s,
        }
        return json.dumps(payload, sort_keys=True)

    @property
    def overlap_s(self) -> float:
        if self.overlap is None:
            return 0.0
        return max(0.0, self.overlap[1] - self.overlap[0])


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    split: str
    meta: dict = field(default_factory=dict)
    root: Path | None = None

    def audio_path(self, entry: ManifestEntry) -> Path:
        if self.root is None:
            return Path(entry.audio)
        return self.root / entry.audio

    def kind_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.kind] = counts.get(e.kind, 0) + 1
        return counts


def mix_overlap(a, b, target_overlap_s: float) -> OverlapMixture:
    """Offset b against a so their spans intersect for target_overlap_s.

    a and b are (Waveform, transcript) pairs sharing a sample rate. The
    offset resolves to whole samples, so the realized overlap matches the
    target to within one sample period. Inside the overlap the mixture is
    the plain sum a + b.
    """
    wave_a, tokens_a = a
    wave_b, tokens_b = b
    if wave_a.sample_rate != wave_b.sample_rate:
        raise OverlapError(
            f"mismatched sample rates: {wave_a.sample_rate} vs {wave_b.sample_rate}"
        )
    sr = wave_a.sample_rate
    dur_a = wave_a.samples.size / sr
    dur_b = wave_b.samples.size / sr
    if target_overlap_s < 0 or target_overlap_s > min(dur_a, dur_b) + 1e-12:
        raise OverlapError(
            f"target overlap {target_overlap_s:.3f}s exceeds shorter utterance "
            f"({min(dur_a, dur_b):.3f}s)"
        )
    offset_n = int(round((dur_a - target_overlap_s) * sr))
    offset_n = max(0, offset_n)
    n_mix = max(wave_a.samples.size, offset_n + wave_b.samples.size)
    mixed = np.zeros(n_mix)
    mixed[:wave_a.samples.size] = wave_a.samples
    mixed[offset_n:offset_n + wave_b.samples.size] += wave_b.samples
    offset_s = offset_n / sr
    span_1 = (0.0, dur_a)
    span_2 = (offset_s, offset_s + dur_b)
    overlap = (max(span_1[0], span_2[0]), min(span_1[1], span_2[1]))
    if overlap[1] < overlap[0]:
        overlap = (overlap[0], overlap[0])
    return OverlapMixture(Waveform(mixed, sr), list(tokens_a), list(tokens_b),
                          span_1, span_2, overlap)


def labels_from_spans(spans, n_samples: int, sample_rate: int, frame_rate: float,
                      num_channels: int = 2) -> FrameActivityLabels:
    """Frame t (center (t+0.5)/rate) is active for channel m iff the center
    falls inside span m, start-inclusive and end-exclusive."""
    T = int(np.ceil(n_samples * frame_rate / sample_rate - 1e-9))
    labels = np.zeros((T, num_channels), dtype=np.int8)
    centers = (np.arange(T) + 0.5) / frame_rate
    for m, (start, end) in enumerate(spans[:num_channels]):
        labels[:, m] = ((centers >= start) & (centers < end)).astype(np.int8)
    return FrameActivityLabels(labels, frame_rate)


def derive_frame_labels(mix: OverlapMixture, frame_rate: float) -> FrameActivityLabels:
    return labels_from_spans(
        [mix.span_1, mix.span_2],
        mix.mixed.samples.size,
        mix.mixed.sample_rate,
        frame_rate,
    )


def _entry_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _render_single(seed: int, index: int, cfg: ToneCorpusConfig):
    rng = _entry_rng(seed, index)
    tokens = sample_token_sequence(rng, cfg)
    utt_seed = int(rng.integers(0, 2 ** 31))
    wave, tokens = synth_tone_utterance(tokens, cfg, seed=utt_seed)
    dur = wave.duration_s
    return wave, ManifestEntry(
        entry_id="", audio="", kind="single",
        transcripts=[tokens], spans=[(0.0, dur)], overlap=None, duration_s=dur,
    )


def _render_overlapped(seed: int, index: int, cfg: ToneCorpusConfig, overlap_range):
    rng = _entry_rng(seed, index)
    tokens_a = sample_token_sequence(rng, cfg)
    tokens_b = sample_token_sequence(rng, cfg)
    seed_a = int(rng.integers(0, 2 ** 31))
    seed_b = int(rng.integers(0, 2 ** 31))
    wave_a, _ = synth_tone_utterance(tokens_a, cfg, seed=seed_a)
    wave_b, _ = synth_tone_utterance(tokens_b, cfg, seed=seed_b)
    lo, hi = overlap_range
    hi = min(hi, wave_a.duration_s, wave_b.duration_s)
    target = float(rng.uniform(lo, hi)) if hi > lo else float(hi)
    mix = mix_overlap((wave_a, tokens_a), (wave_b, tokens_b), target)
    return mix.mixed, ManifestEntry(
        entry_id="", audio="", kind="overlapped",
        transcripts=[mix.transcript_1, mix.transcript_2],
        spans=[mix.span_1, mix.span_2], overlap=mix.overlap,
        duration_s=mix.mixed.duration_s,
    )


def worker_count() -> int:
    """Worker cap from MTCASCADE_THREADS (>= 1); defaults to 1."""
    raw = os.environ.get("MTCASCADE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise OverlapError(f"MTCASCADE_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def build_dataset(out_dir, n_single: int, n_overlap: int, seed: int,
                  split: str = "train", corpus_cfg: ToneCorpusConfig | None = None,
                  overlap_range=TOY_OVERLAP_RANGE_S) -> Path:
    """Generate a manifest plus content-addressed WAVs under out_dir.

    Deterministic in seed: entry i draws from its own child stream, so
    generation order and worker count cannot change the output bytes.
    Returns the manifest path.
    """
    if n_single < 0 or n_overlap < 0:
        raise OverlapError("entry counts must be non-negative")
    cfg = corpus_cfg or ToneCorpusConfig()
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    def render(index):
        if index < n_single:
            return _render_single(seed, index, cfg)
        return _render_overlapped(seed, index, cfg, overlap_range)

    total = n_single + n_overlap
    workers = worker_count()
    if workers > 1 and total > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rendered = list(pool.map(render, range(total)))
    else:
        rendered = [render(i) for i in range(total)]

    entries = []
    for index, (wave, entry) in enumerate(rendered):
        pcm = np.round(np.clip(wave.samples, -1.0, 1.0) * 32767.0).astype("<i2")
        digest = hashlib.sha1(pcm.tobytes()).hexdigest()[:16]
        rel = f"audio/{digest}.wav"
        target = out_dir / rel
        if not target.exists():
            write_wav(target, wave)
        entry.entry_id = f"{split}-{index:05d}"
        entry.audio = rel
        entries.append(entry)

    meta = {
        "kind": "manifest-meta",
        "seed": seed,
        "split": split,
        "sample_rate": cfg.sample_rate,
        "vocab_size": cfg.vocab_size,
        "num_tokens": cfg.num_tokens,
        "token_duration_s": cfg.token_duration_s,
        "overlap_range_s": list(overlap_range),
        "paper_overlap_range_s": list(PAPER_OVERLAP_RANGE_S),
        "overlap_scale_note": SCALE_NOTE,
    }
    manifest_path = out_dir / f"{split}.jsonl"
    try:
        with open(manifest_path, "w") as f:
            f.write(json.dumps(meta, sort_keys=True) + "\n")
            for e in entries:
                f.write(e.to_json() + "\n")
    except OSError as exc:
        raise OverlapError(f"failed writing manifest {manifest_path}: {exc}") from exc
    return manifest_path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    meta: dict = {}
    with open(path) as f:
        for line_no, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("kind") == "manifest-meta":
                meta = obj
                continue
            if obj["kind"] == "single" and len(obj["transcripts"]) != 1:
                raise OverlapError(
                    f"{path}:{line_no + 1}: single entry with {len(obj['transcripts'])} transcripts"
                )
            entries.append(ManifestEntry(
                entry_id=obj["id"],
                audio=obj["audio"],
                kind=obj["kind"],
                transcripts=[list(map(int, t)) for t in obj["transcripts"]],
                spans=[tuple(s) for s in obj["spans"]],
                overlap=tuple(obj["overlap"]) if obj["overlap"] is not None else None,
                duration_s=obj["duration_s"],
            ))
    return DatasetManifest(entries=entries, seed=meta.get("seed", 0),
                           split=meta.get("split", path.stem), meta=meta, root=path.parent)
