"""Token embedding and stacked LSTM sequence encoders.

Gate layout inside the fused ``4H`` projection is ``[input, forget, output,
candidate]``. Sequences are batched ``(B, N, D_in)`` with a per-row
``valid_len``; the recurrence runs up to the longest valid length in the batch
and rows past their own length carry state unchanged and emit zeros.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, VocabularyError
from .params import glorot_uniform


@dataclass
class EncodedSequence:
    outputs: T.Tensor  # (B, N, H)
    valid_len: np.ndarray  # (B,)

    @property
    def mask(self):
        return length_mask(self.valid_len, self.outputs.shape[-2])


def length_mask(valid_len, n):
    """Boolean ``(B, n)`` mask, true at positions ``< valid_len``."""
    return np.arange(n)[None, :] < np.asarray(valid_len)[:, None]


def init_lstm(scope, rng, input_dim, hidden, layers=1):
    """Create ``layers`` stacked LSTM banks under ``scope`` (``l0``, ``l1``, ...)."""
    banks = []
    for layer in range(layers):
        in_dim = input_dim if layer == 0 else hidden
        s = scope.scope(f"l{layer}")
        s.add("W_x", glorot_uniform(rng, (in_dim, 4 * hidden), in_dim, hidden))
        s.add("W_h", glorot_uniform(rng, (hidden, 4 * hidden), hidden, hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        s.add("b", b)
        banks.append(s)
    return banks


def lstm_banks(scope, layers):
    return [scope.scope(f"l{layer}") for layer in range(layers)]


def _cell(gates, c_prev, hidden):
    hc = T.lstm_cell(gates, c_prev)
    return hc[..., :hidden], hc[..., hidden:]


def lstm_step(x, state, bank):
    """One LSTM cell update.

    Args:
        x: input ``(..., D_in)``.
        state: ``(h, c)`` pair, each ``(..., H)``.
        bank: parameter scope holding ``W_x``, ``W_h`` and ``b``.

    Returns:
        The new ``(h, c)``.
    """
    h_prev, c_prev = state
    W_x, W_h, b = bank["W_x"], bank["W_h"], bank["b"]
    hidden = W_h.shape[0]
    if x.shape[-1] != W_x.shape[0] or h_prev.shape[-1] != hidden:
        raise DimensionError(
            f"lstm_step: input {x.shape} / state {h_prev.shape} do not fit W_x {W_x.shape}, W_h {W_h.shape}")
    gates = T.affine([(x, W_x), (h_prev, W_h)], b)
    return _cell(gates, c_prev, hidden)


def embed(token_ids, table):
    """Look up rows of an embedding ``table`` for integer ``token_ids``."""
    ids = np.asarray(token_ids, dtype=np.intp)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise VocabularyError(f"token id out of range for vocabulary of size {vocab}")
    return T.take(table, ids)


def _encode_layer(x, valid_len, bank):
    return T.lstm_scan(x, bank["W_x"], bank["W_h"], bank["b"], valid_len)


def encode(x, valid_len, banks):
    """Run stacked LSTM layers over a batch of sequences.

    Args:
        x: ``(B, N, D_in)`` tensor.
        valid_len: ``(B,)`` integer lengths, each in ``[1, N]``.
        banks: one parameter scope per layer, bottom first.

    Returns:
        EncodedSequence with ``(B, N, H)`` outputs; rows at or past a
        sample's valid length are zero.
    """
    x = T.as_tensor(x)
    valid_len = np.asarray(valid_len, dtype=np.intp)
    if x.ndim != 3 or x.shape[1] == 0:
        raise ContractError(f"encode expects a non-empty (B, N, D) sequence, got {x.shape}")
    if valid_len.shape != (x.shape[0],) or valid_len.min() < 1 or valid_len.max() > x.shape[1]:
        raise ContractError(f"valid_len {valid_len} incompatible with sequence shape {x.shape}")
    out = x
    for bank in banks:
        out = _encode_layer(out, valid_len, bank)
    return EncodedSequence(out, valid_len)
