"""Linear activity probe over mask-encoder activations, overlap estimation,
and probe-conditioned decoding dispatch.

The probe is a single affine map from one mask-encoder layer's frame
activations to a speaker-activity logit. Run once per channel-select
index it yields per-speaker activity tracks; the co-active frame count
estimates the overlap length, and a mixture is routed to two-pass
multi-channel decoding only when that estimate clears the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import FeatureSequence
from .model import GeometryError, ModelBundle, ModelError, decode_mt, decode_st
from .nn import checkpoint as ckpt
from .nn import tensor as T
from .nn.layers import ParamStore
from .nn.optim import adam_step
from .nn.tensor import Tensor
from .overlap import DatasetManifest, labels_from_spans
from .transducer import DecodeStats


@dataclass
class ProbeConfig:
    insertion_layer: int = -1     # -1: final mask-encoder layer
    activity_threshold: float = 0.5
    lr: float = 0.05
    max_steps: int = 400
    plateau_tol: float = 1e-6
    plateau_patience: int = 30
    seed: int = 0


@dataclass
class ProbeModel:
    weight: np.ndarray            # (model_dim,)
    bias: float
    insertion_layer: int
    activity_threshold: float

    def __post_init__(self):
        if not (0.0 < self.activity_threshold < 1.0):
            raise ModelError(
                f"activity threshold must be in (0, 1), got {self.activity_threshold}"
            )


@dataclass
class ActivityTrack:
    probs: np.ndarray             # (T,) in [0, 1]
    frame_rate: float

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]


@dataclass
class OverlapEstimate:
    overlap_s: float
    co_active_frames: int
    decision: str                 # "single" | "overlapped"
    threshold_s: float


def _resolve_layer(bundle: ModelBundle, insertion_layer: int) -> int:
    if bundle.mask_encoder is None:
        raise ModelError("activity probe needs an mt wiring with a mask encoder")
    depth = len(bundle.mask_encoder.blocks)
    layer = insertion_layer if insertion_layer >= 0 else depth + insertion_layer
    if not (0 <= layer < depth):
        raise GeometryError(
            f"insertion layer {insertion_layer} outside mask depth {depth}"
        )
    return layer


def probe_activations(bundle: ModelBundle, feat: FeatureSequence, channel: int,
                      insertion_layer: int) -> np.ndarray:
    """Frame activations (T, D) at the probe's tap point, gradient-free."""
    layer = _resolve_layer(bundle, insertion_layer)
    with T.no_grad():
        audio_out = bundle.encode_audio(feat)
        per_layer = bundle.mask_layer_activations(audio_out, channel)
    return per_layer[layer].data


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_probe_weights(X, y, cfg: ProbeConfig):
    """Logistic regression by Adam on cached activations.

    Returns (weight, bias, loss history). Stops at the step budget or when
    the loss plateaus.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    store = ParamStore(seed=cfg.seed, dtype=np.float64)
    w = store.param("probe.weight", (X.shape[1], 1), init="zeros")
    b = store.param("probe.bias", (1,), init="zeros")
    x_t = Tensor(X)
    y_t = Tensor(y)
    history = []
    best = np.inf
    stale = 0
    for step in range(cfg.max_steps):
        p = T.sigmoid(T.add(T.matmul(x_t, w), b))
        eps = 1e-7
        bce = T.mul(
            T.tsum(T.add(T.mul(y_t, T.log(T.add(p, eps))),
                         T.mul(T.add(1.0, T.mul(y_t, -1.0)),
                               T.log(T.add(T.add(1.0, T.mul(p, -1.0)), eps))))),
            -1.0 / max(1, X.shape[0]),
        )
        bce.backward()
        adam_step(store, cfg.lr, t=step + 1)
        loss = float(bce.item())
        history.append(loss)
        if loss < best - cfg.plateau_tol:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                break
    return w.data[:, 0].copy(), float(b.data[0]), history


def train_probe(bundle: ModelBundle, manifest: DatasetManifest, frontend_cfg,
                cfg: ProbeConfig | None = None, features=None):
    """Fit the probe on overlapped entries with span-derived frame labels.

    The encoders stay frozen: activations are cached once per (entry,
    channel) and only the probe's affine map is optimized.
    """
    from .frontend import featurize, read_wav

    cfg = cfg or ProbeConfig()
    layer = _resolve_layer(bundle, cfg.insertion_layer)
    xs, ys = [], []
    for i, entry in enumerate(manifest.entries):
        if entry.kind != "overlapped":
            continue
        if features is not None:
            feat = features[i]
        else:
            feat = featurize(read_wav(manifest.audio_path(entry)), frontend_cfg)
        wave_samples = int(round(entry.duration_s * frontend_cfg.sample_rate))
        labels = labels_from_spans(entry.spans, wave_samples, frontend_cfg.sample_rate,
                                   feat.frame_rate)
        for m in (1, 2):
            acts = probe_activations(bundle, feat, m, layer)
            col = labels.labels[:, m - 1]
            if acts.shape[0] != col.shape[0]:
                raise GeometryError(
                    f"{entry.entry_id}: {acts.shape[0]} activation frames vs "
                    f"{col.shape[0]} label frames"
                )
            xs.append(acts)
            ys.append(col)
    if not xs:
        raise ModelError("no overlapped entries to train the probe on")
    X = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)
    weight, bias, history = fit_probe_weights(X, y, cfg)
    probe = ProbeModel(weight=weight.astype(np.float64), bias=bias,
                       insertion_layer=layer, activity_threshold=cfg.activity_threshold)
    return probe, history


def infer_activity(bundle: ModelBundle, probe: ProbeModel, feat: FeatureSequence,
                   channel: int) -> ActivityTrack:
    acts = probe_activations(bundle, feat, channel, probe.insertion_layer)
    if acts.shape[1] != probe.weight.shape[0]:
        raise GeometryError(
            f"probe width {probe.weight.shape[0]} vs activation dim {acts.shape[1]}"
        )
    z = acts.astype(np.float64) @ probe.weight + probe.bias
    return ActivityTrack(_sigmoid(z), feat.frame_rate)


def estimate_overlap(track_1: ActivityTrack, track_2: ActivityTrack,
                     activity_threshold: float = 0.5,
                     threshold_s: float = 0.5) -> OverlapEstimate:
    """Co-active frame count converted to seconds, thresholded for dispatch."""
    if track_1.num_frames != track_2.num_frames:
        raise ModelError(
            f"track lengths differ: {track_1.num_frames} vs {track_2.num_frames}"
        )
    if track_1.frame_rate != track_2.frame_rate:
        raise ModelError("track frame rates differ")
    co_active = int(np.sum((track_1.probs > activity_threshold)
                           & (track_2.probs > activity_threshold)))
    overlap_s = co_active / track_1.frame_rate
    decision = "overlapped" if overlap_s > threshold_s else "single"
    return OverlapEstimate(overlap_s=overlap_s, co_active_frames=co_active,
                           decision=decision, threshold_s=threshold_s)


def conditioned_decode(bundle: ModelBundle, probe: ProbeModel, feat: FeatureSequence,
                       threshold_s: float = 0.5, stats: DecodeStats | None = None):
    """Probe first, then route: two-pass decode only when overlap is likely.

    Returns {"mode", "outputs", "estimate", "probe_frames"}. Probe inference
    runs no decoding, so its cost is reported separately from decode stats.
    """
    if bundle.wiring.kind != "mt_cascade":
        raise ModelError("conditioned decoding needs the mt_cascade wiring "
                         "(direct single-pass path plus mask path)")
    track_1 = infer_activity(bundle, probe, feat, 1)
    track_2 = infer_activity(bundle, probe, feat, 2)
    estimate = estimate_overlap(track_1, track_2, probe.activity_threshold, threshold_s)
    if estimate.decision == "overlapped":
        outputs = decode_mt(bundle, feat, stats=stats)
    else:
        outputs = [decode_st(bundle, feat, stats=stats)]
    return {
        "mode": estimate.decision,
        "outputs": outputs,
        "estimate": estimate,
        "probe_frames": track_1.num_frames + track_2.num_frames,
    }


def save_probe(probe: ProbeModel, path):
    arrays = {
        "probe.weight": probe.weight.astype(np.float32),
        "probe.bias": np.array([probe.bias], dtype=np.float32),
    }
    meta = {
        "probe": {
            "insertion_layer": probe.insertion_layer,
            "activity_threshold": probe.activity_threshold,
        }
    }
    ckpt.save_arrays(path, arrays, wiring=meta)


def load_probe(path) -> ProbeModel:
    arrays, meta = ckpt.load_arrays(path)
    if "probe.weight" not in arrays or not isinstance(meta, dict) or "probe" not in meta:
        raise ckpt.CheckpointError(f"{path} is not a probe checkpoint")
    return ProbeModel(
        weight=arrays["probe.weight"].astype(np.float64),
        bias=float(arrays["probe.bias"][0]),
        insertion_layer=int(meta["probe"]["insertion_layer"]),
        activity_threshold=float(meta["probe"]["activity_threshold"]),
    )
