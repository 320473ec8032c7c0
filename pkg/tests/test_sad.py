import numpy as np
import pytest

from mtcascade.frontend import FeatureSequence
from mtcascade.model import ModelError, build_model
from mtcascade.sad import (
    ActivityTrack,
    OverlapEstimate,
    ProbeConfig,
    ProbeModel,
    conditioned_decode,
    estimate_overlap,
    fit_probe_weights,
    infer_activity,
    load_probe,
    save_probe,
)
from test_model import tiny_features, tiny_wiring

FRAME_RATE = 100.0 / 3.0


def _track(probs):
    return ActivityTrack(np.asarray(probs, dtype=np.float64), FRAME_RATE)


class TestInferActivity:
    def test_zero_probe_outputs_half(self):
        bundle = build_model(tiny_wiring("mt_baseline"), seed=0)
        probe = ProbeModel(weight=np.zeros(8), bias=0.0, insertion_layer=0,
                           activity_threshold=0.5)
        track = infer_activity(bundle, probe, tiny_features(seed=0), 1)
        assert np.allclose(track.probs, 0.5)

    def test_large_bias_saturates(self):
        bundle = build_model(tiny_wiring("mt_baseline"), seed=1)
        probe = ProbeModel(weight=np.zeros(8), bias=20.0, insertion_layer=0,
                           activity_threshold=0.5)
        track = infer_activity(bundle, probe, tiny_features(seed=1), 1)
        assert (track.probs >= 0.999).all()

    def test_geometry_mismatch_rejected(self):
        bundle = build_model(tiny_wiring("mt_baseline"), seed=2)
        probe = ProbeModel(weight=np.zeros(5), bias=0.0, insertion_layer=0,
                           activity_threshold=0.5)
        with pytest.raises(ModelError):
            infer_activity(bundle, probe, tiny_features(seed=2), 1)

    def test_insertion_layer_out_of_range_rejected(self):
        bundle = build_model(tiny_wiring("mt_baseline"), seed=3)
        probe = ProbeModel(weight=np.zeros(8), bias=0.0, insertion_layer=4,
                           activity_threshold=0.5)
        with pytest.raises(ModelError, match="insertion layer"):
            infer_activity(bundle, probe, tiny_features(seed=3), 1)

    def test_threshold_outside_unit_interval_rejected(self):
        with pytest.raises(ModelError, match="threshold"):
            ProbeModel(weight=np.zeros(4), bias=0.0, insertion_layer=0,
                       activity_threshold=1.5)


class TestEstimateOverlap:
    def test_perfect_tracks_recover_truth_within_one_frame(self):
        # oracle activity from known spans: estimate equals truth exactly
        T = 120
        centers = (np.arange(T) + 0.5) / FRAME_RATE
        span_1, span_2 = (0.0, 2.4), (1.5, 3.3)
        p1 = ((centers >= span_1[0]) & (centers < span_1[1])).astype(float)
        p2 = ((centers >= span_2[0]) & (centers < span_2[1])).astype(float)
        est = estimate_overlap(_track(p1), _track(p2))
        truth = span_1[1] - span_2[0]
        assert abs(est.overlap_s - truth) <= 1.0 / FRAME_RATE

    def test_disjoint_activity_decides_single(self):
        p1 = np.concatenate([np.ones(30), np.zeros(30)])
        p2 = np.concatenate([np.zeros(30), np.ones(30)])
        est = estimate_overlap(_track(p1), _track(p2))
        assert est.overlap_s == 0.0
        assert est.co_active_frames == 0
        assert est.decision == "single"

    def test_forty_coactive_frames_at_toy_rate(self):
        p1 = np.concatenate([np.ones(60), np.zeros(20)])
        p2 = np.concatenate([np.zeros(20), np.ones(60)])
        est = estimate_overlap(_track(p1), _track(p2), threshold_s=0.5)
        assert est.co_active_frames == 40
        assert est.overlap_s == pytest.approx(1.2)
        assert est.decision == "overlapped"

    def test_raising_theta_never_increases_coactive_count(self):
        rng = np.random.default_rng(4)
        p1, p2 = rng.random(200), rng.random(200)
        counts = [
            estimate_overlap(_track(p1), _track(p2), activity_threshold=theta).co_active_frames
            for theta in (0.1, 0.3, 0.5, 0.7, 0.9)
        ]
        assert counts == sorted(counts, reverse=True)

    def test_channel_exchange_symmetry(self):
        rng = np.random.default_rng(5)
        p1, p2 = rng.random(100), rng.random(100)
        a = estimate_overlap(_track(p1), _track(p2))
        b = estimate_overlap(_track(p2), _track(p1))
        assert a.overlap_s == b.overlap_s
        assert a.decision == b.decision

    def test_length_mismatch_rejected(self):
        with pytest.raises(ModelError, match="lengths differ"):
            estimate_overlap(_track(np.zeros(5)), _track(np.zeros(6)))


class TestProbeFit:
    def test_zero_steps_returns_initialization(self):
        rng = np.random.default_rng(6)
        X, y = rng.normal(size=(50, 4)), rng.integers(0, 2, 50)
        w, b, history = fit_probe_weights(X, y, ProbeConfig(max_steps=0))
        assert np.array_equal(w, np.zeros(4))
        assert b == 0.0
        assert history == []

    def test_separable_blobs_reach_full_accuracy(self):
        rng = np.random.default_rng(7)
        n = 200
        X = np.concatenate([
            rng.normal(loc=+2.0, scale=0.4, size=(n, 6)),
            rng.normal(loc=-2.0, scale=0.4, size=(n, 6)),
        ])
        y = np.concatenate([np.ones(n), np.zeros(n)])
        w, b, history = fit_probe_weights(X, y, ProbeConfig(max_steps=200, lr=0.1))
        assert len(history) <= 200
        pred = (X @ w + b) > 0
        assert (pred == y.astype(bool)).mean() == 1.0


class TestConditionedDecode:
    def test_saturated_probe_forces_overlapped_mode(self):
        bundle = build_model(tiny_wiring("mt_cascade"), seed=8)
        probe = ProbeModel(weight=np.zeros(8), bias=20.0, insertion_layer=0,
                           activity_threshold=0.5)
        routed = conditioned_decode(bundle, probe, tiny_features(T=40, seed=8))
        assert routed["mode"] == "overlapped"
        assert len(routed["outputs"]) == 2

    def test_silent_probe_forces_single_mode(self):
        bundle = build_model(tiny_wiring("mt_cascade"), seed=9)
        probe = ProbeModel(weight=np.zeros(8), bias=-20.0, insertion_layer=0,
                           activity_threshold=0.5)
        routed = conditioned_decode(bundle, probe, tiny_features(T=40, seed=9))
        assert routed["mode"] == "single"
        assert len(routed["outputs"]) == 1

    def test_requires_cascade_wiring(self):
        bundle = build_model(tiny_wiring("mt_baseline"), seed=10)
        probe = ProbeModel(weight=np.zeros(8), bias=0.0, insertion_layer=0,
                           activity_threshold=0.5)
        with pytest.raises(ModelError, match="mt_cascade"):
            conditioned_decode(bundle, probe, tiny_features(seed=10))


class TestProbeCheckpoint:
    def test_roundtrip(self, tmp_path):
        probe = ProbeModel(weight=np.arange(8, dtype=np.float64), bias=-1.5,
                           insertion_layer=1, activity_threshold=0.4)
        path = tmp_path / "probe.ckpt"
        save_probe(probe, path)
        back = load_probe(path)
        assert np.allclose(back.weight, probe.weight)
        assert back.bias == pytest.approx(probe.bias)
        assert back.insertion_layer == 1
        assert back.activity_threshold == pytest.approx(0.4)
