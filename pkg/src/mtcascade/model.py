"""The three model wirings and their losses and decoders.

single_talker: audio encoder straight into the shared decoder.
mt_baseline:   audio encoder, then a mask encoder run once per channel
               index, each pass decoded against one reference; the loss
               is the sum of per-channel transducer losses.
mt_cascade:    both paths share one decoder; per utterance the audio
               branch is taken with probability lambda (single-speaker
               items only), otherwise the per-channel mask branch, so the
               expected loss is lambda * L_audio + (1 - lambda) * sum of
               channel losses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .frontend import FeatureSequence
from .nn import checkpoint as ckpt
from .nn import tensor as T
from .nn.layers import ConformerEncoder, Embedding, Linear, LstmLayer, ParamStore
from .nn.tensor import Tensor
from .transducer import DecodeStats, greedy_decode, rnnt_loss_from_node

KINDS = ("single_talker", "mt_baseline", "mt_cascade")


class ModelError(ValueError):
    pass


class GeometryError(ModelError):
    """Inputs disagree with the bundle's wiring geometry."""


@dataclass
class WiringDescriptor:
    kind: str
    feature_dim: int = 240
    vocab_size: int = 17
    blank_id: int = 0
    num_channels: int = 2
    lambda_rate: float = 0.5
    model_dim: int = 32
    audio_layers: int = 2
    mask_layers: int = 2
    heads: int = 2
    ff_mult: int = 4
    conv_kernel: int = 7
    pred_embed_dim: int = 16
    pred_hidden: int = 64
    pred_layers: int = 1
    joint_dim: int = 48
    max_positions: int = 512
    pretrained_audio: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown wiring kind: {self.kind}")
        if self.kind == "single_talker":
            self.num_channels = 1
        if self.num_channels < 1:
            raise ModelError("num_channels must be >= 1")
        if not (0.0 <= self.lambda_rate <= 1.0):
            raise ModelError(f"lambda_rate must be in [0, 1], got {self.lambda_rate}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    total: float
    audio_branch: float | None
    mask_branch: list[float]
    branch_taken: str
    step: int = 0
    resampled: bool = False


class PredictionNetwork:
    """Label history encoder: embedding plus a unidirectional LSTM stack.

    The shared decoder must replay label prefixes incrementally at decode
    time, so the streaming (single-direction) form is used here.
    """

    def __init__(self, store, prefix, wiring: WiringDescriptor):
        self.blank_id = wiring.blank_id
        self.embed = Embedding(store, f"{prefix}.embed", wiring.vocab_size,
                               wiring.pred_embed_dim)
        dims = [wiring.pred_embed_dim] + [wiring.pred_hidden] * wiring.pred_layers
        self.layers = [
            LstmLayer(store, f"{prefix}.lstm{i}", dims[i], dims[i + 1])
            for i in range(wiring.pred_layers)
        ]

    def encode_history(self, labels):
        """States p_0..p_U for the prefix sequence, as a (U+1, H) tensor.

        p_u conditions on the first u labels; the blank id doubles as the
        start-of-sequence input.
        """
        ids = np.concatenate([[self.blank_id], np.asarray(labels, dtype=np.int64)])
        h = self.embed(ids)
        for layer in self.layers:
            h = layer(h)
        return h

    def initial_state(self):
        states = []
        h = self.embed(np.array([self.blank_id], dtype=np.int64))
        for layer in self.layers:
            h, state = layer.step(h, layer.initial_state(h.data.dtype))
            states.append(state)
        return h, states

    def step(self, state, token):
        _, layer_states = state
        h = self.embed(np.array([token], dtype=np.int64))
        new_states = []
        for layer, st in zip(self.layers, layer_states):
            h, new_st = layer.step(h, st)
            new_states.append(new_st)
        return h, new_states


class JointNetwork:
    """One-hidden-layer MLP combining encoder frames and label states."""

    # log-prob assigned to non-blank symbols in the fixed terminal row
    TERMINAL_NEG = -1e4

    def __init__(self, store, prefix, wiring: WiringDescriptor):
        self.blank_id = wiring.blank_id
        self.w_enc = store.param(f"{prefix}.w_enc", (wiring.model_dim, wiring.joint_dim),
                                 fan_in=wiring.model_dim)
        self.w_pred = store.param(f"{prefix}.w_pred", (wiring.pred_hidden, wiring.joint_dim),
                                  fan_in=wiring.pred_hidden)
        self.b = store.param(f"{prefix}.b", (wiring.joint_dim,), init="zeros")
        self.out = Linear(store, f"{prefix}.out", wiring.joint_dim, wiring.vocab_size)

    def lattice(self, enc_out, pred_out):
        """Log-softmaxed joint grid of shape (T+1, U+1, V).

        Rows 0..T-1 come from real encoder frames. Row T is a fixed
        blank-certain distribution: it closes the lattice at (T, U) but
        admits no label emission after the audio ends, so every emission
        the loss rewards is one greedy decoding can reach.
        """
        pe = T.matmul(enc_out, self.w_enc)
        pp = T.add(T.matmul(pred_out, self.w_pred), self.b)
        n_frames, J = pe.data.shape
        U1 = pp.data.shape[0]
        h = T.tanh(T.add(T.reshape(pe, (n_frames, 1, J)), T.reshape(pp, (1, U1, J))))
        logits = T.add(T.matmul(h, self.out.w), self.out.b)
        lp = T.log_softmax(logits, axis=-1)
        vocab = self.out.b.data.shape[0]
        terminal = np.full((1, U1, vocab), self.TERMINAL_NEG, dtype=lp.data.dtype)
        terminal[0, :, self.blank_id] = 0.0
        return T.concat([lp, Tensor(terminal)], axis=0)

    def logits_for_frame(self, enc_frame, pred_h):
        """Raw logits for one (frame, label-state) pair; decode hot path."""
        pe = T.matmul(Tensor(enc_frame.reshape(1, -1)), self.w_enc)
        pp = T.add(T.matmul(pred_h, self.w_pred), self.b)
        h = T.tanh(T.add(pe, pp))
        return T.add(T.matmul(h, self.out.w), self.out.b).data[0]


class ModelBundle:
    """Parameter store plus the wired-up encoders and shared decoder."""

    def __init__(self, wiring: WiringDescriptor, seed=0, dtype=np.float32):
        self.wiring = wiring
        self.store = ParamStore(seed=seed, dtype=dtype)
        self.stats = {"audio_encoder_calls": 0}
        w = wiring
        self.audio_encoder = ConformerEncoder(
            self.store, "audio_encoder", w.feature_dim, w.model_dim, w.audio_layers,
            w.heads, w.ff_mult, w.conv_kernel, w.max_positions)
        if w.kind == "single_talker":
            self.mask_encoder = None
        else:
            self.mask_encoder = ConformerEncoder(
                self.store, "mask_encoder", w.model_dim + w.num_channels, w.model_dim,
                w.mask_layers, w.heads, w.ff_mult, w.conv_kernel, w.max_positions)
            # Start the one-hot input rows identical so channel identity is
            # learned, not baked in by the init draw.
            proj = self.mask_encoder.in_proj.w.data
            proj[w.model_dim + 1:] = proj[w.model_dim]
        self.prediction = PredictionNetwork(self.store, "decoder.prediction", w)
        self.joint = JointNetwork(self.store, "decoder.joint", w)

    def check_features(self, feat: FeatureSequence):
        if feat.dim != self.wiring.feature_dim:
            raise GeometryError(
                f"feature dim {feat.dim} != wiring feature_dim {self.wiring.feature_dim}"
            )

    def encode_audio(self, feat: FeatureSequence):
        self.check_features(feat)
        self.stats["audio_encoder_calls"] += 1
        x = Tensor(np.ascontiguousarray(feat.frames, dtype=self.store.dtype))
        return self.audio_encoder(x)

    def encode_masked(self, audio_out, channel: int):
        if self.mask_encoder is None:
            raise ModelError("single_talker wiring has no mask encoder")
        tagged = append_channel_index(audio_out, channel, self.wiring.num_channels)
        return self.mask_encoder(tagged)

    def mask_layer_activations(self, audio_out, channel: int):
        tagged = append_channel_index(audio_out, channel, self.wiring.num_channels)
        return self.mask_encoder.forward_layers(tagged)


def append_channel_index(enc_out, m: int, num_channels: int):
    """Suffix every frame with the one-hot channel index (width M)."""
    if not (1 <= m <= num_channels):
        raise ModelError(f"channel index {m} outside [1, {num_channels}]")
    n = enc_out.data.shape[0]
    onehot = np.zeros((n, num_channels), dtype=enc_out.data.dtype)
    onehot[:, m - 1] = 1.0
    return T.concat([enc_out, Tensor(onehot)], axis=-1)


def build_model(wiring: WiringDescriptor, seed=0, dtype=np.float32) -> ModelBundle:
    return ModelBundle(wiring, seed=seed, dtype=dtype)


def _channel_loss_node(bundle, audio_out, channel, labels):
    masked = bundle.encode_masked(audio_out, channel)
    pred = bundle.prediction.encode_history(labels)
    lattice = bundle.joint.lattice(masked, pred)
    return rnnt_loss_from_node(lattice, labels, blank_id=bundle.wiring.blank_id)


def _audio_branch_loss_node(bundle, audio_out, labels):
    pred = bundle.prediction.encode_history(labels)
    lattice = bundle.joint.lattice(audio_out, pred)
    return rnnt_loss_from_node(lattice, labels, blank_id=bundle.wiring.blank_id)


def forward_single_talker(bundle, feat, labels, step=0):
    audio_out = bundle.encode_audio(feat)
    loss = _audio_branch_loss_node(bundle, audio_out, labels)
    report = LossReport(total=float(loss.item()), audio_branch=float(loss.item()),
                        mask_branch=[], branch_taken="audio", step=step)
    return loss, report


def forward_mt_baseline(bundle, feat, transcripts, step=0):
    """Sum of per-channel losses; absent channels score an empty reference."""
    if bundle.wiring.kind == "single_talker":
        raise ModelError("mask-channel forward needs an mt wiring")
    M = bundle.wiring.num_channels
    if len(transcripts) > M:
        raise ModelError(f"{len(transcripts)} transcripts for {M} channels")
    audio_out = bundle.encode_audio(feat)
    losses = []
    for m in range(1, M + 1):
        labels = transcripts[m - 1] if m - 1 < len(transcripts) else []
        try:
            losses.append(_channel_loss_node(bundle, audio_out, m, labels))
        except ValueError as exc:
            raise ModelError(f"channel {m}: {exc}") from exc
    total = losses[0]
    for node in losses[1:]:
        total = T.add(total, node)
    report = LossReport(total=float(total.item()), audio_branch=None,
                        mask_branch=[float(l.item()) for l in losses],
                        branch_taken="mask", step=step)
    return total, report


def sample_branch(rng: np.random.Generator, lambda_rate: float, kind: str):
    """Audio branch with probability lambda, legal only for single-speaker
    items; an audio draw on an overlapped item falls back to the mask
    branch and is flagged as resampled."""
    want_audio = rng.random() < lambda_rate
    if want_audio and kind != "single":
        return "mask", True
    return ("audio" if want_audio else "mask"), False


def forward_mt_cascade(bundle, feat, transcripts, kind, rng, step=0):
    if bundle.wiring.kind != "mt_cascade":
        raise ModelError(f"cascade forward on {bundle.wiring.kind} wiring")
    branch, resampled = sample_branch(rng, bundle.wiring.lambda_rate, kind)
    if branch == "audio":
        audio_out = bundle.encode_audio(feat)
        loss = _audio_branch_loss_node(bundle, audio_out, transcripts[0])
        report = LossReport(total=float(loss.item()), audio_branch=float(loss.item()),
                            mask_branch=[], branch_taken="audio", step=step,
                            resampled=resampled)
        return loss, report
    loss, report = forward_mt_baseline(bundle, feat, transcripts, step=step)
    report.resampled = resampled
    return loss, report


class _GreedyDecoder:
    """Adapter giving greedy_decode an incremental prediction/joint view."""

    def __init__(self, bundle):
        self.bundle = bundle

    def initial_state(self):
        return self.bundle.prediction.initial_state()

    def step(self, state, token):
        return self.bundle.prediction.step(state, token)

    def joint_logits(self, enc_frame, state):
        h, _ = state
        return self.bundle.joint.logits_for_frame(enc_frame, h)


def decode_st(bundle, feat, stats: DecodeStats | None = None):
    """Single pass: audio encoder straight into the greedy decoder."""
    if bundle.wiring.kind == "mt_baseline":
        raise ModelError("no direct audio decode path in mt_baseline wiring")
    with T.no_grad():
        audio_out = bundle.encode_audio(feat)
        return greedy_decode(audio_out.data, _GreedyDecoder(bundle),
                             blank_id=bundle.wiring.blank_id, stats=stats)


def decode_mt(bundle, feat, stats: DecodeStats | None = None):
    """One decode pass per channel index; audio encoding computed once."""
    if bundle.wiring.kind == "single_talker":
        raise ModelError("multi-channel decode needs an mt wiring")
    with T.no_grad():
        audio_out = bundle.encode_audio(feat)
        outputs = []
        for m in range(1, bundle.wiring.num_channels + 1):
            masked = bundle.encode_masked(audio_out, m)
            outputs.append(greedy_decode(masked.data, _GreedyDecoder(bundle),
                                         blank_id=bundle.wiring.blank_id, stats=stats))
        return outputs


def save_bundle(bundle: ModelBundle, path):
    arrays = {name: p.data for name, p in bundle.store.params.items()}
    ckpt.save_arrays(path, arrays, wiring=bundle.wiring.to_dict())


def load_bundle(path, dtype=np.float32) -> ModelBundle:
    arrays, wiring_dict = ckpt.load_arrays(path)
    if not isinstance(wiring_dict, dict) or "kind" not in wiring_dict:
        raise ckpt.CheckpointError(f"checkpoint {path} has no wiring descriptor")
    wiring = WiringDescriptor(**wiring_dict)
    bundle = build_model(wiring, seed=0, dtype=dtype)
    loaded = bundle.store.load_state(arrays, strict=True)
    missing = set(bundle.store.params) - set(loaded)
    if missing:
        raise ckpt.CheckpointError(f"checkpoint missing tensors: {sorted(missing)[:5]}")
    return bundle


def load_audio_encoder(bundle: ModelBundle, path) -> int:
    """Copy audio-encoder tensors by name prefix; everything else stays.

    Returns the number of tensors loaded and marks the wiring pretrained.
    """
    arrays, _ = ckpt.load_arrays(path)
    loaded = bundle.store.load_state(arrays, prefix="audio_encoder.", strict=False)
    if not loaded:
        raise ckpt.CheckpointError(f"no audio_encoder.* tensors found in {path}")
    bundle.wiring.pretrained_audio = True
    return len(loaded)
