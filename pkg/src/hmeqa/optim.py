"""Adam with bias correction, and global-norm gradient clipping."""

import numpy as np

from .errors import ContractError


class AdamState:
    """First/second moment buffers mirroring a ParameterSet."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}


def adam_step(params, state, lr, grads=None):
    """Apply one bias-corrected Adam update in place.

    ``grads`` defaults to each tensor's ``.grad``; a missing gradient counts
    as zero. Returns the state with its step counter incremented.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr:
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
    return state


def global_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm):
    """Scale every gradient so the global L2 norm is at most ``max_norm``."""
    norm = global_norm(params)
    if norm > max_norm:
        k = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * k
    return norm
