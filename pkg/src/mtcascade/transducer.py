"""Exact transducer loss over the alignment lattice, with greedy decoding.

The lattice holds log-softmaxed joint outputs at every node (t, u) for
t in [0, T] frames consumed and u in [0, U] labels emitted. An alignment
is a monotone path from (0, 0) to (T, U) (T blank moves, U label moves,
C(T+U, U) paths) closed by a terminal blank at (T, U). The loss is the
negative log of the summed path probabilities; forward and backward
recursions run in log space and yield the exact gradient with respect to
the lattice entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn.tensor import Tensor


@dataclass
class JointLattice:
    """(T+1) x (U+1) x V log-probability lattice for one utterance."""

    log_probs: np.ndarray
    blank_id: int = 0

    def __post_init__(self):
        if self.log_probs.ndim != 3:
            raise ValueError(f"lattice must be 3-D, got shape {self.log_probs.shape}")
        if not (0 <= self.blank_id < self.log_probs.shape[2]):
            raise ValueError(f"blank_id {self.blank_id} outside vocabulary")

    @property
    def T(self):
        return self.log_probs.shape[0] - 1

    @property
    def U(self):
        return self.log_probs.shape[1] - 1

    @property
    def vocab_size(self):
        return self.log_probs.shape[2]


def _check_normalized(log_probs, tol=1e-3):
    lse = np.logaddexp.reduce(log_probs.astype(np.float64), axis=-1)
    worst = float(np.abs(lse).max()) if lse.size else 0.0
    if worst > tol:
        raise ValueError(f"lattice not normalized: max |logsumexp| = {worst:.3g}")


def _forward_backward(lp, labels, blank):
    """Alpha/beta recursions in float64. Returns (alpha, beta, ll_fwd, ll_bwd)."""
    T1, U1, _ = lp.shape
    T, U = T1 - 1, U1 - 1
    lp_blank = lp[:, :, blank]
    # lp_emit[t, u] = log prob of emitting label u+1 from node (t, u)
    lp_emit = lp[:, np.arange(U), labels] if U > 0 else np.zeros((T1, 0))

    alpha = np.empty((T1, U1))
    # c[u] = sum of emit log-probs for the first u labels within one row
    c = np.zeros(U1)
    if U > 0:
        c[1:] = np.cumsum(lp_emit[0])
    alpha[0] = c
    for t in range(1, T1):
        b = alpha[t - 1] + lp_blank[t - 1]
        if U > 0:
            c[1:] = np.cumsum(lp_emit[t])
            alpha[t] = np.logaddexp.accumulate(b - c) + c
        else:
            alpha[t] = b
    ll_fwd = alpha[T, U] + lp_blank[T, U]

    beta = np.empty((T1, U1))
    e = np.zeros(U1)
    if U > 0:
        e[1:] = np.cumsum(lp_emit[T])
    beta[T] = (e[U] - e) + lp_blank[T, U]
    for t in range(T - 1, -1, -1):
        d = lp_blank[t] + beta[t + 1]
        if U > 0:
            e[1:] = np.cumsum(lp_emit[t])
            rev = np.logaddexp.accumulate((d + e)[::-1])[::-1]
            beta[t] = rev - e
        else:
            beta[t] = d
    ll_bwd = beta[0, 0]
    return alpha, beta, ll_fwd, ll_bwd


def rnnt_loss(lattice: JointLattice, labels, check_normalization=True):
    """Negative log-likelihood of the label sequence plus d(loss)/d(log_probs).

    labels is the reference id sequence (blank excluded); its length must
    equal the lattice's U. The gradient entries are minus the posterior
    transition probabilities, so summing exp over the vocabulary axis of
    the negated gradient recovers node occupancies.
    """
    labels = np.asarray(labels, dtype=np.int64)
    lp = lattice.log_probs.astype(np.float64)
    T1, U1, V = lp.shape
    T, U = T1 - 1, U1 - 1
    if labels.shape[0] != U:
        raise ValueError(f"label length {labels.shape[0]} does not match lattice U {U}")
    if U > 0 and (labels.min() < 0 or labels.max() >= V):
        raise ValueError("label id outside vocabulary")
    if U > 0 and np.any(labels == lattice.blank_id):
        raise ValueError("blank must not appear in a reference")
    if check_normalization:
        _check_normalized(lp)

    blank = lattice.blank_id
    alpha, beta, ll_fwd, ll_bwd = _forward_backward(lp, labels, blank)
    ll = ll_fwd

    grad = np.zeros_like(lp)
    # blank transitions (t, u) -> (t+1, u)
    if T > 0:
        grad[:T, :, blank] = -np.exp(alpha[:T] + lp[:T, :, blank] + beta[1:] - ll)
    # terminal blank at (T, U)
    grad[T, U, blank] -= np.exp(alpha[T, U] + lp[T, U, blank] - ll)
    # label transitions (t, u) -> (t, u+1)
    if U > 0:
        occ = np.exp(alpha[:, :U] + lp[:, np.arange(U), labels] + beta[:, 1:] - ll)
        grad[:, np.arange(U), labels] -= occ

    loss = -ll
    if abs(ll_fwd - ll_bwd) > 1e-6 * max(1.0, abs(ll_fwd)):
        raise FloatingPointError(
            f"forward/backward disagree: {ll_fwd} vs {ll_bwd}"
        )
    return loss, grad.astype(lattice.log_probs.dtype)


def rnnt_loss_from_node(log_probs: Tensor, labels, blank_id=0):
    """Autodiff bridge: scalar loss node whose backward injects the exact
    lattice gradient into the log-softmax output."""
    lattice = JointLattice(log_probs.data, blank_id=blank_id)
    loss, grad = rnnt_loss(lattice, labels, check_normalization=False)

    def backward_fn(g):
        return (g * grad,)

    out = np.asarray(loss, dtype=np.float64)
    return Tensor(out, parents=(log_probs,), backward_fn=backward_fn)


def rnnt_loss_by_enumeration(lattice: JointLattice, labels):
    """Brute-force oracle: explicitly sum every monotone alignment.

    Exponential in T+U; intended for small lattices only.
    """
    labels = np.asarray(labels, dtype=np.int64)
    lp = lattice.log_probs.astype(np.float64)
    T, U = lattice.T, lattice.U
    blank = lattice.blank_id
    path_logps = []

    def walk(t, u, acc):
        if t == T and u == U:
            path_logps.append(acc + lp[T, U, blank])
            return
        if t < T:
            walk(t + 1, u, acc + lp[t, u, blank])
        if u < U:
            walk(t, u + 1, acc + lp[t, u, labels[u]])

    walk(0, 0, 0.0)
    return -np.logaddexp.reduce(np.array(path_logps))


def batch_rnnt_loss(log_probs, labels, frame_lens, label_lens, blank_id=0):
    """Mean loss over a padded batch, with per-item exact gradients.

    log_probs: (B, Tmax+1, Umax+1, V), contiguous in the trailing (u, v)
    axes so per-item slices stay cache-friendly. labels: (B, Umax) padded
    ids. frame_lens / label_lens give each item's true T and U. Gradient
    entries beyond an item's (T+1, U+1) window are zero.
    """
    log_probs = np.ascontiguousarray(log_probs)
    B = log_probs.shape[0]
    if len(frame_lens) != B or len(label_lens) != B:
        raise ValueError("length vectors must match batch size")
    grads = np.zeros_like(log_probs)
    losses = np.empty(B, dtype=np.float64)
    for i in range(B):
        T, U = int(frame_lens[i]), int(label_lens[i])
        if T + 1 > log_probs.shape[1] or U + 1 > log_probs.shape[2]:
            raise ValueError(
                f"item {i} lengths (T={T}, U={U}) exceed padded dims {log_probs.shape[1:3]}"
            )
        window = log_probs[i, :T + 1, :U + 1]
        lattice = JointLattice(window, blank_id=blank_id)
        loss, grad = rnnt_loss(lattice, labels[i][:U], check_normalization=False)
        losses[i] = loss
        grads[i, :T + 1, :U + 1] = grad
    return float(losses.mean()), grads / B


@dataclass
class DecodeStats:
    frames: int = 0
    emissions: int = 0
    cap_hits: int = 0

    def merge(self, other):
        self.frames += other.frames
        self.emissions += other.emissions
        self.cap_hits += other.cap_hits

    def as_dict(self):
        return {"frames": self.frames, "emissions": self.emissions, "cap_hits": self.cap_hits}


def greedy_decode(encoder_out, decoder, blank_id=0, max_symbols_per_frame=10,
                  stats: DecodeStats | None = None):
    """Frame-synchronous greedy search.

    decoder exposes initial_state(), step(state, token) -> state, and
    joint_logits(enc_frame, state) -> numpy logits. Per frame, argmax
    tokens are emitted until blank wins; a per-frame emission cap forces
    the frame to advance and is counted in the stats.
    """
    enc = np.asarray(encoder_out)
    state = decoder.initial_state()
    out = []
    local = stats if stats is not None else DecodeStats()
    for t in range(enc.shape[0]):
        local.frames += 1
        emitted = 0
        while True:
            logits = decoder.joint_logits(enc[t], state)
            token = int(np.argmax(logits))
            if token == blank_id:
                break
            if emitted >= max_symbols_per_frame:
                local.cap_hits += 1
                break
            out.append(token)
            state = decoder.step(state, token)
            emitted += 1
            local.emissions += 1
    return out
