import json

import numpy as np
import pytest

from mtcascade.frontend import Waveform, read_wav
from mtcascade.overlap import (
    OverlapError,
    build_dataset,
    derive_frame_labels,
    labels_from_spans,
    load_manifest,
    mix_overlap,
)
from mtcascade.tones import ToneCorpusConfig, synth_tone_utterance

SR = 8000
FRAME_RATE = 100.0 / 3.0  # stacked toy rate


def _tone_pair(dur_a=3.0, dur_b=2.0):
    t_a = np.arange(int(dur_a * SR)) / SR
    t_b = np.arange(int(dur_b * SR)) / SR
    a = Waveform(0.2 * np.sin(2 * np.pi * 440 * t_a), SR)
    b = Waveform(0.2 * np.sin(2 * np.pi * 880 * t_b), SR)
    return (a, [1, 2, 3]), (b, [4, 5])


class TestMixOverlap:
    def test_full_overlap_is_elementwise_sum(self):
        (a, ta), _ = _tone_pair(2.0, 2.0)
        b = Waveform(np.full(a.samples.size, 0.1), SR)
        mix = mix_overlap((a, ta), (b, [7]), target_overlap_s=2.0)
        assert mix.span_2[0] == 0.0
        assert np.array_equal(mix.mixed.samples, a.samples + b.samples)
        assert mix.overlap == (0.0, 2.0)

    def test_offset_arithmetic(self):
        # offset of b must be dur_a - target; mixture runs to offset + dur_b
        pair_a, pair_b = _tone_pair(3.0, 2.0)
        mix = mix_overlap(pair_a, pair_b, target_overlap_s=0.5)
        assert mix.span_2[0] == pytest.approx(2.5, abs=1.0 / SR)
        assert mix.mixed.duration_s == pytest.approx(4.5, abs=1.0 / SR)
        assert mix.overlap_s == pytest.approx(0.5, abs=1.0 / SR)

    def test_overlap_region_is_bitwise_sum(self):
        pair_a, pair_b = _tone_pair(3.0, 2.0)
        mix = mix_overlap(pair_a, pair_b, target_overlap_s=1.0)
        start = int(round(mix.span_2[0] * SR))
        a = pair_a[0].samples
        b = pair_b[0].samples
        inside = slice(start, a.size)
        assert np.array_equal(mix.mixed.samples[inside], a[inside] + b[:a.size - start])
        # outside the overlap only one source is present
        assert np.array_equal(mix.mixed.samples[:start], a[:start])

    def test_mismatched_rates_rejected(self):
        a = Waveform(np.zeros(100), 8000)
        b = Waveform(np.zeros(100), 16000)
        with pytest.raises(OverlapError, match="sample rates"):
            mix_overlap((a, [1]), (b, [2]), 0.0)

    def test_excessive_target_rejected(self):
        pair_a, pair_b = _tone_pair(3.0, 2.0)
        with pytest.raises(OverlapError, match="exceeds"):
            mix_overlap(pair_a, pair_b, target_overlap_s=2.5)


class TestFrameLabels:
    def test_single_speaker_second_column_zero(self):
        labels = labels_from_spans([(0.0, 2.0)], 2 * SR, SR, FRAME_RATE)
        assert labels.labels[:, 0].all()
        assert not labels.labels[:, 1].any()

    def test_full_overlap_both_columns_one(self):
        pair_a, _ = _tone_pair(2.0, 2.0)
        mix = mix_overlap(pair_a, (pair_a[0], [9]), 2.0)
        labels = derive_frame_labels(mix, FRAME_RATE)
        assert labels.labels.all()

    def test_boundary_convention_frame_count(self):
        # spans (0, 3) and (2.5, 4.5): centers in [2.5, 3.0) at 33.33 fps
        labels = labels_from_spans([(0.0, 3.0), (2.5, 4.5)], int(4.5 * SR), SR, FRAME_RATE)
        both = (labels.labels[:, 0] & labels.labels[:, 1]).sum()
        centers = (np.arange(labels.num_frames) + 0.5) / FRAME_RATE
        expected = int(((centers >= 2.5) & (centers < 3.0)).sum())
        assert both == expected
        assert both in (16, 17)

    def test_label_mass_matches_span_length(self):
        rng = np.random.default_rng(5)
        cfg = ToneCorpusConfig()
        for _ in range(10):
            n_a = int(rng.integers(6, 13))
            n_b = int(rng.integers(6, 13))
            wave_a, ta = synth_tone_utterance(list(rng.integers(1, 17, n_a)), cfg, seed=1)
            wave_b, tb = synth_tone_utterance(list(rng.integers(1, 17, n_b)), cfg, seed=2)
            target = float(rng.uniform(0.5, min(wave_a.duration_s, wave_b.duration_s)))
            mix = mix_overlap((wave_a, ta), (wave_b, tb), target)
            labels = derive_frame_labels(mix, FRAME_RATE)
            for m, span in enumerate([mix.span_1, mix.span_2]):
                measured = labels.labels[:, m].sum() / FRAME_RATE
                assert abs(measured - (span[1] - span[0])) <= 1.0 / FRAME_RATE


class TestBuildDataset:
    def test_empty_counts_give_valid_manifest(self, tmp_path):
        path = build_dataset(tmp_path, n_single=0, n_overlap=0, seed=0)
        manifest = load_manifest(path)
        assert manifest.entries == []
        assert manifest.seed == 0

    def test_half_and_half_kinds(self, tmp_path):
        path = build_dataset(tmp_path, n_single=6, n_overlap=6, seed=3)
        manifest = load_manifest(path)
        assert manifest.kind_counts() == {"single": 6, "overlapped": 6}

    def test_same_seed_byte_identical(self, tmp_path):
        p1 = build_dataset(tmp_path / "a", n_single=4, n_overlap=4, seed=9)
        p2 = build_dataset(tmp_path / "b", n_single=4, n_overlap=4, seed=9)
        assert p1.read_bytes() == p2.read_bytes()
        p3 = build_dataset(tmp_path / "c", n_single=4, n_overlap=4, seed=10)
        assert p1.read_bytes() != p3.read_bytes()

    def test_negative_counts_rejected(self, tmp_path):
        with pytest.raises(OverlapError):
            build_dataset(tmp_path, n_single=-1, n_overlap=0, seed=0)

    def test_metadata_roundtrip_and_kind_consistency(self, tmp_path):
        path = build_dataset(tmp_path, n_single=3, n_overlap=5, seed=4)
        manifest = load_manifest(path)
        for entry in manifest.entries:
            wave = read_wav(manifest.audio_path(entry))
            assert wave.duration_s == pytest.approx(entry.duration_s, abs=1.0 / SR)
            if entry.kind == "single":
                assert len(entry.transcripts) == 1
                assert entry.overlap is None
            else:
                assert len(entry.transcripts) == 2
                s1, s2 = entry.spans
                rederived = (max(s1[0], s2[0]), min(s1[1], s2[1]))
                assert rederived == pytest.approx(entry.overlap)
                assert entry.overlap_s > 0

    def test_overlap_targets_within_toy_range(self, tmp_path):
        path = build_dataset(tmp_path, n_single=0, n_overlap=12, seed=6)
        manifest = load_manifest(path)
        lo, hi = manifest.meta["overlap_range_s"]
        for entry in manifest.entries:
            assert lo - 1e-6 <= entry.overlap_s <= hi + 1e-6

    def test_paths_relative_and_wavs_shared_dir(self, tmp_path):
        path = build_dataset(tmp_path, n_single=2, n_overlap=1, seed=8)
        for line in path.read_text().splitlines()[1:]:
            rel = json.loads(line)["audio"]
            assert not rel.startswith("/")
            assert (tmp_path / rel).exists()
