"""Dense tensors with reverse-mode automatic differentiation.

Every primitive records its inputs and a closure mapping the output gradient
to input gradients. ``backward`` topologically sorts the recorded graph and
sweeps it once in reverse. Arrays are plain numpy arrays in row-major order;
leading dimensions act as batch dimensions for every primitive, so the same
code serves single samples and minibatches.

Weight matrices are stored ``(in, out)`` and applied as ``x @ W``.
"""

import contextlib
import math

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, EmptySupportError, NumericError

_state = {
    "grad_enabled": True,
    "check_finite": True,
    "dtype": np.float64,
}


def set_default_dtype(dtype):
    """Set the element type used for new leaf tensors (float64 or float32)."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype.type


def get_default_dtype():
    return _state["dtype"]


def set_finite_checks(enabled):
    _state["check_finite"] = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


@contextlib.contextmanager
def finite_checks(enabled):
    """Temporarily switch the per-node finite checks on or off."""
    prev = _state["check_finite"]
    _state["check_finite"] = bool(enabled)
    try:
        yield
    finally:
        _state["check_finite"] = prev


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


def _all_finite(arr):
    # a finite sum implies finite elements; only a non-finite sum needs the full scan
    return math.isfinite(arr.sum()) or bool(np.isfinite(arr).all())


def _check_finite(arr, op):
    if _state["check_finite"] and not _all_finite(arr):
        raise NumericError(f"non-finite value produced by node '{op}'")


class Tensor:
    """A dense array that may take part in a differentiable computation."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.array(data, dtype=dtype or _state["dtype"])
        _check_finite(arr, "leaf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        if _state["check_finite"] and not _all_finite(data):
            raise NumericError(f"non-finite value produced by node '{op}'")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        if _state["grad_enabled"]:
            for p in parents:
                if p.requires_grad:
                    out.requires_grad = True
                    out._parents = parents
                    out._backward = backward
                    break
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    if type(x) is Tensor or isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Graph and backward sweep
# ---------------------------------------------------------------------------


class Graph:
    """Topologically ordered primitive applications leading to one output.

    Only nodes that require gradients are kept; constants are pruned because
    nothing flows into them.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        order = []
        visited = set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, t):
        return any(n is t for n in self.nodes)

    def backward(self, loss):
        """Sweep the graph once in reverse, writing ``.grad`` on every node.

        Intermediate gradients start from zero on each sweep. Leaf gradients
        accumulate across sweeps until cleared with ``zero_grad``.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes or self.nodes[-1] is not loss:
            raise ContractError("loss is not the output node of this graph")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if _state["check_finite"] and not _all_finite(g):
                raise NumericError(f"non-finite gradient at node '{node.op}'")
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg


def backward(loss, graph=None):
    """Populate ``.grad`` of every tensor reachable from a scalar ``loss``."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return graph
    if graph is None:
        graph = Graph.from_output(loss)
    graph.backward(loss)
    return graph


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    """Hadamard product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def neg(a):
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, k):
    """Multiply by a fixed python scalar."""
    a = as_tensor(a)
    k = float(k)
    return Tensor._from_op(a.data * k, (a,), lambda g: (g * k,), "scale")


def sigmoid(a):
    a = as_tensor(a)
    y = expit(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    on = a.data > 0
    return Tensor._from_op(np.where(on, a.data, 0.0).astype(a.data.dtype), (a,),
                           lambda g: (g * on,), "relu")


def lstm_cell(gates, c_prev):
    """Fused LSTM cell nonlinearity.

    ``gates`` is ``(..., 4H)`` laid out ``[input, forget, output, candidate]``
    pre-activations and ``c_prev`` is ``(..., H)``. Returns ``(..., 2H)``
    holding ``[h ; c]`` with ``c = f*c_prev + i*g`` and ``h = o*tanh(c)``.
    """
    gates, c_prev = as_tensor(gates), as_tensor(c_prev)
    H = c_prev.shape[-1]
    if gates.shape[-1] != 4 * H or gates.shape[:-1] != c_prev.shape[:-1]:
        raise DimensionError(f"lstm_cell: gates {gates.shape} do not match cell state {c_prev.shape}")
    sig = expit(gates.data[..., :3 * H])
    i, f, o = sig[..., :H], sig[..., H:2 * H], sig[..., 2 * H:]
    g = np.tanh(gates.data[..., 3 * H:])
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc

    def bw(grad):
        gh, gc = grad[..., :H], grad[..., H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dgates = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev.data * f * (1.0 - f),
            gh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ], axis=-1)
        return dgates, (dc * f if c_prev.requires_grad else None)

    return Tensor._from_op(np.concatenate([h, c], axis=-1), (gates, c_prev), bw, "lstm_cell")


def lstm_scan(x, W_x, W_h, b, valid_len):
    """Run one LSTM layer over time as a single node.

    ``x`` is ``(B, N, D_in)``, ``W_x`` is ``(D_in, 4H)``, ``W_h`` is
    ``(H, 4H)`` and ``b`` is ``(4H,)``. State starts at zero. Rows at or past
    their valid length keep their state and emit zeros. Each step computes
    ``x_t @ W_x + h @ W_h + b`` on ``(B, .)`` slices, so a step's arithmetic
    never depends on how long the sequence is. Returns ``(B, N, H)`` hidden
    outputs; the backward pass is hand-written backpropagation through time.
    """
    x, W_x, W_h, b = as_tensor(x), as_tensor(W_x), as_tensor(W_h), as_tensor(b)
    B, N, D_in = x.data.shape
    H = W_h.data.shape[0]
    if (W_h.data.shape != (H, 4 * H) or W_x.data.shape != (D_in, 4 * H)
            or b.data.shape != (4 * H,)):
        raise DimensionError(
            f"lstm_scan: input {x.data.shape} does not fit W_x {W_x.data.shape}, "
            f"W_h {W_h.data.shape}, b {b.data.shape}")
    valid_len = np.asarray(valid_len)
    t_max = int(valid_len.max())
    Wx, Wh, bias = W_x.data, W_h.data, b.data
    dtype = x.data.dtype
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    out = np.zeros((B, N, H), dtype=dtype)
    cache = []
    t_all = int(valid_len.min())
    for t in range(t_max):
        z = x.data[:, t] @ Wx + h @ Wh + bias
        sig = expit(z[:, :3 * H])
        i, f, o = sig[:, :H], sig[:, H:2 * H], sig[:, 2 * H:]
        g = np.tanh(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        live = (t < valid_len)[:, None]
        cache.append((i, f, o, g, c, tc, h, live))
        if t < t_all:  # every row still running
            out[:, t] = h_new
            h, c = h_new, c_new
        else:
            out[:, t] = np.where(live, h_new, 0.0)
            h = np.where(live, h_new, h)
            c = np.where(live, c_new, c)

    def bw(grad):
        dx = np.zeros_like(x.data)
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(bias)
        dh = np.zeros((B, H), dtype=grad.dtype)
        dc_next = np.zeros((B, H), dtype=grad.dtype)
        for t in range(t_max - 1, -1, -1):
            i, f, o, g, c_prev, tc, h_prev, live = cache[t]
            gh = np.where(live, dh + grad[:, t], 0.0)
            gc = np.where(live, dc_next, 0.0)
            dc = gc + gh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                gh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ], axis=-1)
            if x.requires_grad:
                dx[:, t] = dz @ Wx.T
            dWx += x.data[:, t].T @ dz
            dWh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dh = dz @ Wh.T + np.where(live, 0.0, dh)
            dc_next = dc * f + np.where(live, 0.0, dc_next)
        return dx, dWx, dWh, db

    return Tensor._from_op(out, (x, W_x, W_h, b), bw, "lstm_scan")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    def bw(g):
        with np.errstate(over="ignore", divide="ignore"):
            return (g / x,)

    return Tensor._from_op(y, (a,), bw, "log")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy ``matmul`` semantics (1-D and batched)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-D operands, got {a.shape} and {b.shape}")
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != k_b:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        a2 = a.data if a.ndim > 1 else a.data[None, :]
        b2 = b.data if b.ndim > 1 else b.data[:, None]
        g2 = g.reshape(np.broadcast_shapes(a2.shape[:-2], b2.shape[:-2]) + (a2.shape[-2], b2.shape[-1]))
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), bw, "matmul")


def affine(terms, bias=None):
    """Fused ``sum_i x_i @ W_i + bias``.

    Each ``x_i`` has shape ``(..., in_i)`` with identical leading dimensions and
    each ``W_i`` is ``(in_i, out)``; ``bias`` is ``(out,)``. One node replaces
    the chain of matmuls and adds, which matters for recurrences.
    """
    if not terms:
        raise ContractError("affine needs at least one term")
    xs, ws = [], []
    out = None
    lead = n_out = None
    for x, w in terms:
        x, w = as_tensor(x), as_tensor(w)
        xd, wd = x.data, w.data
        if lead is None:
            lead, n_out = xd.shape[:-1], wd.shape[-1]
        if wd.ndim != 2 or xd.shape[-1] != wd.shape[0] or wd.shape[1] != n_out or xd.shape[:-1] != lead:
            raise DimensionError(f"affine term shape mismatch: {xd.shape} @ {wd.shape}")
        y = xd @ wd
        out = y if out is None else out + y
        xs.append(x)
        ws.append(w)
    parents = xs + ws
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (n_out,):
            raise DimensionError(f"affine bias shape {bias.data.shape} != ({n_out},)")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, n_out)
        grads = [g @ w.data.T if x.requires_grad else None for x, w in zip(xs, ws)]
        for x, w in zip(xs, ws):
            grads.append(x.data.reshape(-1, x.data.shape[-1]).T @ g2 if w.requires_grad else None)
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.requires_grad else None)
        return grads

    return Tensor._from_op(out, tuple(parents), bw, "affine")


def additive_attention(query, keys, v):
    """Scores ``v . tanh(query + keys_i)`` for every position ``i`` in one node.

    ``query`` is ``(..., A)``, ``keys`` is ``(..., N, A)`` or ``(N, A)`` and
    ``v`` is ``(A,)``; returns ``(..., N)``.
    """
    query, keys, v = as_tensor(query), as_tensor(keys), as_tensor(v)
    A = v.data.shape[0]
    if v.data.ndim != 1 or query.data.shape[-1] != A or keys.data.shape[-1] != A:
        raise DimensionError(
            f"additive_attention: query {query.data.shape}, keys {keys.data.shape}, v {v.data.shape}")
    t = np.tanh(query.data[..., None, :] + keys.data)
    out = t @ v.data

    def bw(g):
        gt = g[..., None] * v.data
        dpre = gt * (1.0 - t * t)
        return (
            dpre.sum(axis=-2) if query.requires_grad else None,
            _unbroadcast(dpre, keys.data.shape) if keys.requires_grad else None,
            (g[..., None] * t).reshape(-1, A).sum(axis=0) if v.requires_grad else None,
        )

    return Tensor._from_op(out, (query, keys, v), bw, "additive_attention")


def outer(a, b):
    """Batched outer product: ``(..., S)`` and ``(..., D)`` give ``(..., S, D)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"outer leading shapes differ: {a.shape} vs {b.shape}")
    out = a.data[..., :, None] * b.data[..., None, :]

    def bw(g):
        return (
            (g * b.data[..., None, :]).sum(axis=-1) if a.requires_grad else None,
            (g * a.data[..., :, None]).sum(axis=-2) if b.requires_grad else None,
        )

    return Tensor._from_op(out, (a, b), bw, "outer")


def memory_mix(eps, writes, M_prev):
    """``sum_k eps_k (alpha_k x c_k) + eps_last * M_prev`` as one node.

    ``writes`` is a list of ``(alpha (..., S), c (..., D))`` pairs, ``eps`` is
    ``(..., len(writes) + 1)`` and ``M_prev`` is ``(..., S, D)``.
    """
    eps, M_prev = as_tensor(eps), as_tensor(M_prev)
    writes = [(as_tensor(a), as_tensor(c)) for a, c in writes]
    k = len(writes)
    if k < 1 or eps.data.shape[-1] != k + 1:
        raise DimensionError(f"memory_mix: {k} writes need {k + 1} mixing weights, got {eps.data.shape}")
    e = eps.data[..., :, None, None]
    outers = []
    for a, c in writes:
        if a.data.shape + c.data.shape[-1:] != M_prev.data.shape:
            raise DimensionError(f"memory_mix: write {a.data.shape} x {c.data.shape} vs memory {M_prev.data.shape}")
        outers.append(a.data[..., :, None] * c.data[..., None, :])
    out = e[..., 0, :, :] * outers[0]
    for j in range(1, k):
        out = out + e[..., j, :, :] * outers[j]
    out = out + e[..., k, :, :] * M_prev.data

    def bw(g):
        grads = []
        ge = np.empty(eps.data.shape, dtype=g.dtype)
        for j, o in enumerate(outers):
            ge[..., j] = (g * o).sum(axis=(-2, -1))
        ge[..., k] = (g * M_prev.data).sum(axis=(-2, -1))
        grads.append(ge if eps.requires_grad else None)
        for j, (a, c) in enumerate(writes):
            gj = g * e[..., j, :, :]
            grads.append((gj * c.data[..., None, :]).sum(axis=-1) if a.requires_grad else None)
            grads.append((gj * a.data[..., :, None]).sum(axis=-2) if c.requires_grad else None)
        grads.append(g * e[..., k, :, :] if M_prev.requires_grad else None)
        return grads

    parents = (eps,) + tuple(t for pair in writes for t in pair) + (M_prev,)
    return Tensor._from_op(out, parents, bw, "memory_mix")


def slot_blend(alpha, c, M):
    """Per-slot convex write ``alpha_i * c + (1 - alpha_i) * M_i`` as one node.

    ``alpha`` is ``(..., S)``, ``c`` is ``(..., D)`` and ``M`` is ``(..., S, D)``.
    """
    alpha, c, M = as_tensor(alpha), as_tensor(c), as_tensor(M)
    if alpha.data.shape + c.data.shape[-1:] != M.data.shape:
        raise DimensionError(f"slot_blend: {alpha.data.shape} x {c.data.shape} vs memory {M.data.shape}")
    a = alpha.data[..., :, None]
    out = a * c.data[..., None, :] + (1.0 - a) * M.data

    def bw(g):
        return (
            (g * (c.data[..., None, :] - M.data)).sum(axis=-1) if alpha.requires_grad else None,
            (g * a).sum(axis=-2) if c.requires_grad else None,
            g * (1.0 - a) if M.requires_grad else None,
        )

    return Tensor._from_op(out, (alpha, c, M), bw, "slot_blend")


def weighted_rows(w, rows):
    """Weighted sum of rows: ``(..., N)`` weights over ``(..., N, D)`` rows."""
    w, rows = as_tensor(w), as_tensor(rows)
    if rows.ndim < 2 or w.shape[-1] != rows.shape[-2]:
        raise DimensionError(f"weighted_rows shape mismatch: weights {w.shape}, rows {rows.shape}")
    out = np.matmul(w.data[..., None, :], rows.data)[..., 0, :]

    def bw(g):
        gw = grows = None
        if w.requires_grad:
            gw = _unbroadcast(np.matmul(rows.data, g[..., :, None])[..., 0], w.shape)
        if rows.requires_grad:
            grows = _unbroadcast(w.data[..., :, None] * g[..., None, :], rows.shape)
        return gw, grows

    return Tensor._from_op(out, (w, rows), bw, "weighted_rows")


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


def softmax(x, mask=None):
    """Softmax over the last axis with optional boolean support mask.

    Masked positions are exactly zero. Logits are shifted by the maximum over
    the unmasked positions before exponentiation.
    """
    x = as_tensor(x)
    if mask is None:
        z = x.data
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if (~mask).all(axis=-1).any():
            raise EmptySupportError("masked_softmax: every position of a row is masked")
        z = np.where(mask, x.data, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), bw, "softmax")


def masked_softmax(x, mask):
    return softmax(x, mask)


def log_softmax(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(y, (x,), bw, "log_softmax")


# ---------------------------------------------------------------------------
# Shape manipulation and reductions
# ---------------------------------------------------------------------------


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, ts))

    return Tensor._from_op(out, tuple(ts), bw, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if t.requires_grad else None for i, t in enumerate(ts))

    return Tensor._from_op(out, tuple(ts), bw, "stack")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.array(out), (a,), bw, "getitem")


def take(a, indices):
    """Gather rows along axis 0; repeated indices accumulate gradient."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = a.data[indices]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return Tensor._from_op(out, (a,), bw, "take")


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def blend(mask, new, old):
    """``mask * new + (1 - mask) * old`` for a constant boolean mask.

    Used to carry recurrent state unchanged through padded time steps.
    """
    new, old = as_tensor(new), as_tensor(old)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), np.broadcast_shapes(new.data.shape, old.data.shape))
    out = np.where(m, new.data, old.data)

    def bw(g):
        return (
            _unbroadcast(np.where(m, g, 0.0), new.data.shape) if new.requires_grad else None,
            _unbroadcast(np.where(m, 0.0, g), old.data.shape) if old.requires_grad else None,
        )

    return Tensor._from_op(out, (new, old), bw, "blend")
