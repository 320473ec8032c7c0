"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced, so a scalar
loss can push exact gradients back to every parameter. Compute dtype
follows the arrays passed in: float32 for training, float64 for
gradient-check oracles.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that skips graph construction; inference-only paths."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Node in the computation graph.

    Leaves created with requires_grad=True accumulate into .grad when
    backward() is called on a downstream scalar.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.requires_grad = (
            requires_grad or (_GRAD_ENABLED and any(p.requires_grad for p in parents))
        )
        self.grad = None
        # Graph edges are only kept where gradients can flow.
        self._parents = parents if self.requires_grad else ()
        self._backward_fn = backward_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def backward(self):
        """Backpropagate from a scalar node, accumulating into .grad."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # operator sugar

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def _toposort(root):
    """Iterative DFS topological order over grad-requiring nodes."""
    topo, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return topo


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def power(a, exponent):
    a = as_tensor(a)
    out_data = a.data ** exponent

    def backward_fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward_fn(g):
        return (g * out_data,)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward_fn(g):
        return (g / a.data,)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def sigmoid(a):
    a = as_tensor(a)
    e = np.exp(-np.abs(a.data))
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward_fn(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def swish(a):
    """x * sigmoid(x)."""
    a = as_tensor(a)
    return mul(a, sigmoid(a))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(a.data.shape),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def transpose(a, axes=None):
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)

    def backward_fn(g):
        if axes is None:
            return (np.transpose(g),)
        inverse = np.argsort(axes)
        return (np.transpose(g, inverse),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        pieces = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return Tensor(out_data, parents=tuple(tensors), backward_fn=backward_fn)


def _index_may_repeat(index):
    """Array indices can select an element twice; basic slices cannot."""
    if isinstance(index, tuple):
        return any(_index_may_repeat(i) for i in index)
    return isinstance(index, (np.ndarray, list))


def take(a, index):
    """Slice / integer indexing with scatter-add backward."""
    a = as_tensor(a)
    out_data = a.data[index]
    may_repeat = _index_may_repeat(index)

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        if may_repeat:
            np.add.at(ga, index, g)
        else:
            ga[index] += g
        return (ga,)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def embedding(table, ids):
    """Row gather from a parameter table; ids is a 1-D int array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(out_data, parents=(table,), backward_fn=backward_fn)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward_fn(g):
        soft = np.exp(out_data)
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor(out_data, parents=(a,), backward_fn=backward_fn)


def depthwise_conv1d(x, weight, bias):
    """Per-channel 1-D convolution along the first axis, same padding.

    x: (T, C), weight: (k, C), bias: (C,). Output (T, C) where
    out[t, c] = sum_j x[t + j - k//2, c] * weight[j, c] + bias[c],
    out-of-range taps read as zero.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    T, C = x.data.shape
    k = weight.data.shape[0]
    half = k // 2
    padded = np.zeros((T + k - 1, C), dtype=x.data.dtype)
    padded[half:half + T] = x.data
    out_data = np.zeros_like(x.data)
    for j in range(k):
        out_data += padded[j:j + T] * weight.data[j]
    out_data = out_data + bias.data

    def backward_fn(g):
        gx_padded = np.zeros_like(padded)
        gw = np.zeros_like(weight.data)
        for j in range(k):
            gx_padded[j:j + T] += g * weight.data[j]
            gw[j] = (g * padded[j:j + T]).sum(axis=0)
        gx = gx_padded[half:half + T]
        gb = g.sum(axis=0)
        return gx, gw, gb

    return Tensor(out_data, parents=(x, weight, bias), backward_fn=backward_fn)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine.

    Fused primitive: this sits in every conformer sub-block, so one node
    with a closed-form backward beats eight composed ones.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out_data = normed * gamma.data + beta.data

    def backward_fn(g):
        gbeta = _unbroadcast(g, beta.data.shape)
        ggamma = _unbroadcast(g * normed, gamma.data.shape)
        gy = g * gamma.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True)
                    - normed * (gy * normed).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return Tensor(out_data, parents=(x, gamma, beta), backward_fn=backward_fn)


def glu(x):
    """Gated linear unit over the last axis: a * sigmoid(b)."""
    x = as_tensor(x)
    half = x.data.shape[-1] // 2
    a = take(x, (Ellipsis, slice(0, half)))
    b = take(x, (Ellipsis, slice(half, 2 * half)))
    return mul(a, sigmoid(b))
