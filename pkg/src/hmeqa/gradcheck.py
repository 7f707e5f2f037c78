"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor, backward, finite_checks, no_grad


def _as_named(params):
    if hasattr(params, "items"):
        return list(params.items())
    return [(str(i), t) for i, t in enumerate(params)]


def _scalar(value):
    v = float(value.data.reshape(-1)[0]) if isinstance(value, Tensor) else float(value)
    if not np.isfinite(v):
        raise NumericError("objective returned a non-finite value")
    return v


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|, 1e-8), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


STENCILS = {
    2: ((1.0, 1), (-1.0, -1)),
    4: ((8.0, 1), (-8.0, -1), (-1.0, 2), (1.0, -2)),
}
_DENOM = {2: 2.0, 4: 12.0}


def numeric_gradient(f, tensor, h=1e-5, order=2):
    """Finite-difference gradient of scalar ``f()`` w.r.t. ``tensor.data``.

    ``order=2`` is the plain central difference ``(f(x+h) - f(x-h)) / 2h``;
    ``order=4`` is the five-point stencil, whose truncation error is
    ``O(h^4)`` and so tolerates a larger ``h`` (less roundoff).

    Per-node finite checks are off while probing; the objective itself is
    still checked at every evaluation.
    """
    if order not in STENCILS:
        raise ContractError(f"unsupported stencil order {order}; expected 2 or 4")
    grad = np.zeros(tensor.shape, dtype=np.float64)
    data = tensor.data
    with no_grad(), finite_checks(False):
        for idx in np.ndindex(*data.shape):
            orig = data[idx]
            acc = 0.0
            for weight, k in STENCILS[order]:
                data[idx] = orig + k * h
                acc += weight * _scalar(f())
            data[idx] = orig
            grad[idx] = acc / (_DENOM[order] * h)
    return grad


def gradient_errors(f, params, h=1e-5, order=2):
    """Per-parameter arrays of relative error between analytic and numeric gradients.

    Args:
        f: zero-argument callable building a scalar loss from the tensors in
            ``params``. It must be deterministic.
        params: a ParameterSet, mapping, or sequence of tensors.
        h: finite-difference step.
        order: 2 for central differences, 4 for the five-point stencil.

    Returns:
        dict ``name -> (analytic, numeric, rel_err)``.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    named = _as_named(params)
    for _, t in named:
        t.grad = None
    loss = f()
    _scalar(loss)
    if isinstance(loss, Tensor) and loss.requires_grad:
        backward(loss)
    out = {}
    for name, t in named:
        analytic = np.zeros(t.shape) if t.grad is None else np.array(t.grad, dtype=np.float64)
        numeric = numeric_gradient(f, t, h, order)
        out[name] = (analytic, numeric, relative_error(analytic, numeric))
    return out


def grad_check(f, params, h=1e-5, order=2):
    """Maximum relative gradient error over every scalar of every parameter."""
    errs = gradient_errors(f, params, h, order)
    worst = 0.0
    for _, _, rel in errs.values():
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
