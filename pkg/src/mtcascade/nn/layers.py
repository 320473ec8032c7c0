"""Parameter store and the layers the encoders and decoder are built from."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ShapeError(ValueError):
    """Raised when tensor shapes disagree with a layer contract."""


class ParamStore:
    """Named parameters plus their optimizer state.

    Parameters are Tensors with requires_grad=True; gradients accumulate
    into .grad during backward and are consumed by the optimizer.
    Creation order is deterministic for a fixed seed and build sequence.
    """

    def __init__(self, seed=0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.opt_state: dict[str, dict[str, np.ndarray]] = {}

    def param(self, name, shape, init="he_uniform", fan_in=None):
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(shape)
        if init == "he_uniform":
            fan = fan_in if fan_in is not None else (shape[0] if shape else 1)
            bound = float(np.sqrt(6.0 / max(fan, 1)))
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "small_uniform":
            data = self.rng.uniform(-0.05, 0.05, size=shape)
        else:
            raise ValueError(f"unknown init: {init}")
        t = Tensor(data.astype(self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, arrays, prefix=None, strict=True):
        """Copy arrays into matching parameters.

        With a prefix, only names starting with it are considered. Returns
        the list of loaded names. On strict loads an array whose name is
        not a known parameter is an error.
        """
        loaded = []
        for name, arr in arrays.items():
            if prefix is not None and not name.startswith(prefix):
                continue
            if name not in self.params:
                if strict:
                    raise KeyError(f"unknown tensor name on strict load: {name}")
                continue
            target = self.params[name]
            if target.data.shape != arr.shape:
                raise ShapeError(
                    f"shape mismatch for {name}: have {target.data.shape}, loading {arr.shape}"
                )
            target.data = arr.astype(self.dtype)
            loaded.append(name)
        return loaded

    def byte_digest(self):
        """Concatenated raw bytes of all parameters, for frozen-weight checks."""
        return b"".join(self.params[k].data.tobytes() for k in sorted(self.params))


def affine(x, w, b):
    """y = x @ w + b with exact backward through the graph."""
    x, w, b = T.as_tensor(x), T.as_tensor(w), T.as_tensor(b)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"affine shapes disagree: x {x.data.shape} vs w {w.data.shape}")
    if w.data.shape[1] != b.data.shape[-1]:
        raise ShapeError(f"affine shapes disagree: w {w.data.shape} vs b {b.data.shape}")
    return T.add(T.matmul(x, w), b)


class Linear:
    def __init__(self, store, prefix, in_dim, out_dim):
        self.w = store.param(f"{prefix}.w", (in_dim, out_dim), fan_in=in_dim)
        self.b = store.param(f"{prefix}.b", (out_dim,), init="zeros")

    def __call__(self, x):
        return affine(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store, prefix, dim, eps=1e-5):
        self.gamma = store.param(f"{prefix}.gamma", (dim,), init="ones")
        self.beta = store.param(f"{prefix}.beta", (dim,), init="zeros")
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class FeedForward:
    """Pre-norm two-layer MLP with swish, used as the conformer half-step."""

    def __init__(self, store, prefix, dim, mult=4):
        self.norm = LayerNorm(store, f"{prefix}.norm", dim)
        self.lin1 = Linear(store, f"{prefix}.lin1", dim, dim * mult)
        self.lin2 = Linear(store, f"{prefix}.lin2", dim * mult, dim)

    def __call__(self, x):
        return self.lin2(T.swish(self.lin1(self.norm(x))))


class MultiHeadSelfAttention:
    def __init__(self, store, prefix, dim, heads):
        if dim % heads != 0:
            raise ShapeError(f"model dim {dim} not divisible by head count {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.norm = LayerNorm(store, f"{prefix}.norm", dim)
        self.wq = Linear(store, f"{prefix}.q", dim, dim)
        self.wk = Linear(store, f"{prefix}.k", dim, dim)
        self.wv = Linear(store, f"{prefix}.v", dim, dim)
        self.wo = Linear(store, f"{prefix}.out", dim, dim)

    def __call__(self, x):
        h = self.norm(x)
        q, k, v = self.wq(h), self.wk(h), self.wv(h)
        scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for i in range(self.heads):
            cols = slice(i * self.head_dim, (i + 1) * self.head_dim)
            qi, ki, vi = q[:, cols], k[:, cols], v[:, cols]
            scores = T.mul(T.matmul(qi, ki.T), scale)
            attn = T.softmax(scores, axis=-1)
            outs.append(T.matmul(attn, vi))
        return self.wo(T.concat(outs, axis=-1))


class ConvModule:
    """Pointwise-GLU, depthwise conv, norm, swish, pointwise projection."""

    def __init__(self, store, prefix, dim, kernel=7):
        self.norm = LayerNorm(store, f"{prefix}.norm", dim)
        self.pw1 = Linear(store, f"{prefix}.pw1", dim, 2 * dim)
        self.dw_w = store.param(f"{prefix}.dw.w", (kernel, dim), fan_in=kernel)
        self.dw_b = store.param(f"{prefix}.dw.b", (dim,), init="zeros")
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", dim)
        self.pw2 = Linear(store, f"{prefix}.pw2", dim, dim)

    def __call__(self, x):
        h = T.glu(self.pw1(self.norm(x)))
        h = T.depthwise_conv1d(h, self.dw_w, self.dw_b)
        return self.pw2(T.swish(self.norm2(h)))


class ConformerBlock:
    """Half feed-forward, self-attention, depthwise conv, half feed-forward,
    residuals around each sub-block, final layer norm."""

    def __init__(self, store, prefix, dim, heads, ff_mult=4, conv_kernel=7):
        self.ffn1 = FeedForward(store, f"{prefix}.ffn1", dim, ff_mult)
        self.attn = MultiHeadSelfAttention(store, f"{prefix}.attn", dim, heads)
        self.conv = ConvModule(store, f"{prefix}.conv", dim, conv_kernel)
        self.ffn2 = FeedForward(store, f"{prefix}.ffn2", dim, ff_mult)
        self.norm = LayerNorm(store, f"{prefix}.norm", dim)

    def __call__(self, x):
        x = T.add(x, T.mul(self.ffn1(x), 0.5))
        x = T.add(x, self.attn(x))
        x = T.add(x, self.conv(x))
        x = T.add(x, T.mul(self.ffn2(x), 0.5))
        return self.norm(x)


class ConformerEncoder:
    """Input projection, learned absolute positions, then a conformer stack.

    forward() returns the final activations; forward_layers() additionally
    returns every block output so probes can tap an intermediate layer.
    """

    def __init__(self, store, prefix, in_dim, dim, layers, heads,
                 ff_mult=4, conv_kernel=7, max_positions=512):
        self.prefix = prefix
        self.in_proj = Linear(store, f"{prefix}.in_proj", in_dim, dim)
        self.pos = store.param(f"{prefix}.pos", (max_positions, dim), init="small_uniform")
        self.blocks = [
            ConformerBlock(store, f"{prefix}.block{i}", dim, heads, ff_mult, conv_kernel)
            for i in range(layers)
        ]
        self.max_positions = max_positions

    def forward_layers(self, x):
        n = x.data.shape[0]
        if n > self.max_positions:
            raise ShapeError(
                f"sequence length {n} exceeds max positions {self.max_positions}"
            )
        h = T.add(self.in_proj(x), self.pos[:n])
        per_layer = []
        for block in self.blocks:
            h = block(h)
            per_layer.append(h)
        return per_layer

    def __call__(self, x):
        return self.forward_layers(x)[-1]


class LstmLayer:
    """Single-direction LSTM; step() supports incremental decoding."""

    def __init__(self, store, prefix, in_dim, hidden):
        self.hidden = hidden
        self.wx = store.param(f"{prefix}.wx", (in_dim, 4 * hidden), fan_in=in_dim)
        self.wh = store.param(f"{prefix}.wh", (hidden, 4 * hidden), fan_in=hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias keeps early memory open
        self.b = store.param(f"{prefix}.b", (4 * hidden,), init="zeros")
        self.b.data = b.astype(store.dtype)

    def initial_state(self, dtype):
        h = Tensor(np.zeros((1, self.hidden), dtype=dtype))
        c = Tensor(np.zeros((1, self.hidden), dtype=dtype))
        return h, c

    def step(self, x_t, state):
        h_prev, c_prev = state
        gates = T.add(T.add(T.matmul(x_t, self.wx), T.matmul(h_prev, self.wh)), self.b)
        H = self.hidden
        i = T.sigmoid(gates[:, 0:H])
        f = T.sigmoid(gates[:, H:2 * H])
        g = T.tanh(gates[:, 2 * H:3 * H])
        o = T.sigmoid(gates[:, 3 * H:4 * H])
        c = T.add(T.mul(f, c_prev), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        return h, (h, c)

    def __call__(self, x):
        """Run over a (U, in_dim) sequence, returning (U, hidden)."""
        U = x.data.shape[0]
        if U == 0:
            return Tensor(np.zeros((0, self.hidden), dtype=x.data.dtype))
        state = self.initial_state(x.data.dtype)
        outs = []
        for u in range(U):
            h, state = self.step(x[u:u + 1], state)
            outs.append(h)
        return T.concat(outs, axis=0)


class BiLstmLayer:
    """Concatenated forward and time-reversed backward LSTM passes."""

    def __init__(self, store, prefix, in_dim, hidden):
        self.hidden = hidden
        self.fwd = LstmLayer(store, f"{prefix}.fwd", in_dim, hidden)
        self.bwd = LstmLayer(store, f"{prefix}.bwd", in_dim, hidden)

    def __call__(self, x):
        U = x.data.shape[0]
        if U == 0:
            return Tensor(np.zeros((0, 2 * self.hidden), dtype=x.data.dtype))
        fwd_out = self.fwd(x)
        rev = T.take(x, (slice(None, None, -1),))
        bwd_out = T.take(self.bwd(rev), (slice(None, None, -1),))
        return T.concat([fwd_out, bwd_out], axis=-1)


class Embedding:
    def __init__(self, store, prefix, vocab, dim):
        self.table = store.param(f"{prefix}.table", (vocab, dim), init="small_uniform")

    def __call__(self, ids):
        return T.embedding(self.table, ids)
