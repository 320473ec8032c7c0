"""Shared oracles and the finite-difference harness used across tests."""

import numpy as np


def finite_difference_check(build_loss, params, eps=1e-4, rtol=1e-4, atol=1e-6):
    """Compare analytic gradients to central differences, elementwise.

    build_loss() must rebuild the scalar loss from scratch (gradients are
    cleared first). params maps name -> Tensor. Returns the worst
    (analytic, numeric, name) triple that violates rtol/atol, or None.
    """
    loss = build_loss()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    for p in params.values():
        p.grad = None

    worst = None
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = build_loss().item()
            flat[i] = orig - eps
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = grad_flat[i]
            if abs(a - numeric) > atol + rtol * max(abs(a), abs(numeric)):
                if worst is None or abs(a - numeric) > abs(worst[0] - worst[1]):
                    worst = (a, numeric, f"{name}[{i}]")
    return worst


def random_normalized_lattice(rng, T, U, V, dtype=np.float64):
    """Log-softmaxed random joint lattice of shape (T+1, U+1, V)."""
    logits = rng.normal(size=(T + 1, U + 1, V)).astype(dtype)
    return logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)


def edit_distance_recursive(ref, hyp):
    """Exponential-time minimal edit cost; oracle for the DP version."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    if ref[0] == hyp[0]:
        return edit_distance_recursive(ref[1:], hyp[1:])
    return 1 + min(
        edit_distance_recursive(ref[1:], hyp[1:]),   # substitute
        edit_distance_recursive(ref[1:], hyp),       # delete
        edit_distance_recursive(ref, hyp[1:]),       # insert
    )
