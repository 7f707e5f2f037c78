"""Additive attention scoring shared by the memories and the fusion layer."""

import numpy as np

from . import tensor as T


def additive_scores(query_proj, keys_proj, v):
    """``v . tanh(query_proj + keys_proj_i)`` for every position ``i``.

    ``query_proj`` is ``(..., A)`` and is broadcast over the position axis of
    ``keys_proj`` ``(..., N, A)`` (or ``(N, A)``). Returns ``(..., N)`` logits.
    """
    return T.additive_attention(query_proj, keys_proj, v)


def slot_scores(shared, M, bank, strict_eq=False):
    """Per-slot logits for a memory read or write head.

    With ``strict_eq`` the slot content is ignored and the single logit
    ``v . tanh(shared)`` is repeated for every slot, which makes the
    distribution uniform. Otherwise each slot adds its content projection
    ``M_i @ U`` and a learned slot key ``K_i`` inside the tanh.
    """
    n_slots = M.shape[-2]
    if strict_eq:
        logit = T.matmul(T.tanh(shared), bank["v"])
        logit = T.reshape(logit, logit.shape + (1,))
        return T.add(logit, np.zeros(n_slots, dtype=logit.data.dtype))
    keys = T.add(T.affine([(M, bank["U"])]), bank["K"])
    return additive_scores(shared, keys, bank["v"])
