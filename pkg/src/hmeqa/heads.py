"""Answer heads: multiple-choice hinge ranking and open-ended classification."""

import numpy as np

from . import tensor as T
from .errors import ContractError
from .params import glorot_uniform


def init_heads(scope, rng, rep_dim, task, num_classes):
    if task == "mc":
        mc = scope.scope("mc")
        mc.add("w", glorot_uniform(rng, (rep_dim, 1)))
        mc.add("b", np.zeros(1))
    else:
        op = scope.scope("open")
        op.add("W", glorot_uniform(rng, (rep_dim, num_classes)))
        op.add("b", np.zeros(num_classes))


def mc_score(s_A, bank):
    """Linear score ``w . s_A + b`` for each question+candidate representation."""
    score = T.affine([(s_A, bank["w"])], bank["b"])
    return T.reshape(score, score.shape[:-1])


def mc_loss(scores, positive, margin=1.0):
    """Summed pairwise hinge loss, averaged over the batch.

    For each sample ``sum_{i != p} max(0, margin - (s_p - s_i))``. ``scores``
    is ``(K,)`` or ``(B, K)``; ``positive`` is an index or ``(B,)`` indices.
    The subgradient at the hinge kink is 0.
    """
    scores = T.as_tensor(scores)
    single = scores.ndim == 1
    if single:
        scores = T.reshape(scores, (1,) + scores.shape)
    batch, k = scores.shape
    pos = np.atleast_1d(np.asarray(positive, dtype=np.intp))
    if k < 2:
        raise ContractError("multiple-choice loss needs at least two candidates")
    if margin <= 0:
        raise ContractError("margin must be positive")
    if pos.shape != (batch,) or pos.min() < 0 or pos.max() >= k:
        raise ContractError(f"positive index {positive} out of range for {k} candidates")
    rows = np.arange(batch)
    s_p = T.reshape(scores[rows, pos], (batch, 1))
    hinge = T.relu(T.sub(margin, T.sub(s_p, scores)))
    negatives = np.ones((batch, k))
    negatives[rows, pos] = 0.0
    per_sample = T.tsum(T.mul(hinge, negatives.astype(hinge.data.dtype)), axis=-1)
    return T.reshape(per_sample, ()) if single else T.mean(per_sample)


def open_logits(s_A, bank):
    return T.affine([(s_A, bank["W"])], bank["b"])


def open_probs(s_A, bank):
    return T.softmax(open_logits(s_A, bank))


def open_loss(logits, y):
    """Cross-entropy ``-log p_y`` computed from logits via log-sum-exp.

    ``logits`` is ``(C,)`` or ``(B, C)``; batches are averaged.
    """
    logits = T.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = T.reshape(logits, (1,) + logits.shape)
    batch, c = logits.shape
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    if y.shape != (batch,) or y.min() < 0 or y.max() >= c:
        raise ContractError(f"class index {y} out of range for {c} classes")
    picked = T.log_softmax(logits)[np.arange(batch), y]
    loss = T.neg(T.mean(picked))
    return loss


def predict(scores):
    """Index of the maximum along the last axis; ties go to the lowest index."""
    data = scores.data if isinstance(scores, T.Tensor) else np.asarray(scores)
    return np.argmax(data, axis=-1)
