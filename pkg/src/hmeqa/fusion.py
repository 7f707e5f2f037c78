"""Multimodal fusion and multi-step reasoning.

An LSTM controller repeatedly attends over the video and question feature
sequences, maps each attended context through a ReLU layer, mixes the two with
a learned two-way weight and feeds the mix back into itself. After the last
iteration the controller state is concatenated with plain temporal-attention
contexts over the encoded video streams to form the answer representation.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import additive_scores
from .encoders import init_lstm, lstm_banks, lstm_step
from .errors import ContractError
from .params import glorot_uniform


@dataclass
class FusionState:
    s: T.Tensor  # (B, D_s)
    cell: T.Tensor
    step: int = 0


@dataclass
class FusionStepTrace:
    gamma_v: np.ndarray  # (B, N_v)
    gamma_q: np.ndarray  # (B, N_q)
    phi: np.ndarray  # (B, 2)


@dataclass
class FusionInputs:
    """Feature sequences plus their cached key projections (fixed across steps)."""

    h_v: T.Tensor
    mask_v: np.ndarray
    h_q: T.Tensor
    mask_q: np.ndarray
    keys: dict = field(default_factory=dict)


def init_attention_bank(scope, rng, query_dim, key_dim, att_dim):
    scope.add("W_g", glorot_uniform(rng, (query_dim, att_dim)))
    scope.add("V_g", glorot_uniform(rng, (key_dim, att_dim)))
    scope.add("b_g", np.zeros(att_dim))
    scope.add("v_g", glorot_uniform(rng, (att_dim,)))


def init_fusion(scope, rng, dims, ctrl_dim, att_dim, final_streams):
    """``dims`` maps modality (``v``/``q``) to its feature size.

    ``final_streams`` maps each encoded video stream name to its size; every
    stream gets its own temporal-attention bank under ``final.<name>``.
    """
    for mod in ("v", "q"):
        s = scope.scope(mod)
        init_attention_bank(s, rng, ctrl_dim, dims[mod], att_dim)
        s.add("W_d", glorot_uniform(rng, (dims[mod], ctrl_dim)))
        s.add("b_d", np.zeros(ctrl_dim))
        s.add("W_p", glorot_uniform(rng, (ctrl_dim, att_dim)))
        s.add("V_p", glorot_uniform(rng, (ctrl_dim, att_dim)))
        s.add("b_p", np.zeros(att_dim))
    scope.add("v_p", glorot_uniform(rng, (att_dim,)))
    init_lstm(scope.scope("ctrl"), rng, ctrl_dim, ctrl_dim, 1)
    for name, size in final_streams.items():
        init_attention_bank(scope.scope(f"final.{name}"), rng, ctrl_dim, size, att_dim)


def temporal_attend(s_prev, h_seq, mask, bank, keys=None):
    """Attention over time positions conditioned on the controller state.

    Args:
        s_prev: ``(B, D_s)`` query state.
        h_seq: ``(B, N, F)`` features.
        mask: ``(B, N)`` boolean validity mask.
        bank: scope with ``W_g``, ``V_g``, ``b_g``, ``v_g``.
        keys: optional precomputed ``h_seq @ V_g``.

    Returns:
        ``(gamma, context)`` with shapes ``(B, N)`` and ``(B, F)``.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("temporal attention over an empty valid range")
    if keys is None:
        keys = T.affine([(h_seq, bank["V_g"])])
    query = T.affine([(s_prev, bank["W_g"])], bank["b_g"])
    gamma = T.masked_softmax(additive_scores(query, keys, bank["v_g"]), mask)
    return gamma, T.weighted_rows(gamma, h_seq)


class FusionReasoner:
    def __init__(self, scope, ctrl_dim):
        self.p = scope
        self.ctrl_dim = ctrl_dim
        self.ctrl = lstm_banks(scope.scope("ctrl"), 1)[0]

    def initial_state(self, batch, dtype=np.float64):
        z = np.zeros((batch, self.ctrl_dim), dtype=dtype)
        return FusionState(T.Tensor(z, dtype=dtype), T.Tensor(z, dtype=dtype), 0)

    def prepare(self, h_v, mask_v, h_q, mask_q):
        keys = {
            "v": T.affine([(h_v, self.p["v.V_g"])]),
            "q": T.affine([(h_q, self.p["q.V_g"])]),
        }
        return FusionInputs(h_v, np.asarray(mask_v, bool), h_q, np.asarray(mask_q, bool), keys)

    def transform_content(self, c, modality):
        s = self.p.scope(modality)
        return T.relu(T.affine([(c, s["W_d"])], s["b_d"]))

    def modality_fuse(self, s_prev, d_v, d_q):
        """Two-way modality weights ``phi`` and the fused input ``x``."""
        logits = []
        for mod, d in (("v", d_v), ("q", d_q)):
            s = self.p.scope(mod)
            feat = T.tanh(T.affine([(s_prev, s["W_p"]), (d, s["V_p"])], s["b_p"]))
            logits.append(T.matmul(feat, self.p["v_p"]))
        phi = T.softmax(T.stack(logits, axis=-1))
        x = T.add(T.mul(phi[..., 0:1], d_v), T.mul(phi[..., 1:2], d_q))
        return phi, x

    def reason_step(self, state, inputs):
        gamma_v, c_v = temporal_attend(state.s, inputs.h_v, inputs.mask_v, self.p.scope("v"), inputs.keys.get("v"))
        gamma_q, c_q = temporal_attend(state.s, inputs.h_q, inputs.mask_q, self.p.scope("q"), inputs.keys.get("q"))
        d_v = self.transform_content(c_v, "v")
        d_q = self.transform_content(c_q, "q")
        phi, x = self.modality_fuse(state.s, d_v, d_q)
        s, cell = lstm_step(x, (state.s, state.cell), self.ctrl)
        trace = FusionStepTrace(gamma_v.data.copy(), gamma_q.data.copy(), phi.data.copy())
        return FusionState(s, cell, state.step + 1), trace

    def reason(self, h_v, mask_v, h_q, mask_q, steps, state=None):
        """Run ``steps`` reasoning iterations.

        Returns ``(s_L, traces, state)``; passing the returned state back in
        continues the same trajectory.
        """
        if steps < 1:
            raise ContractError("reasoning needs at least one iteration")
        inputs = self.prepare(h_v, mask_v, h_q, mask_q)
        if state is None:
            state = self.initial_state(h_v.shape[0], h_v.data.dtype)
        traces = []
        for _ in range(steps):
            state, trace = self.reason_step(state, inputs)
            traces.append(trace)
        return state.s, traces, state

    def answer_representation(self, s_L, streams):
        """Concatenate ``s_L`` with one attended context per encoded video stream.

        ``streams`` is a sequence of ``(EncodedSequence, bank_name)``; the
        query for every stream is ``s_L``.
        """
        parts = [s_L]
        for seq, name in streams:
            _, ctx = temporal_attend(s_L, seq.outputs, seq.mask, self.p.scope(f"final.{name}"))
            parts.append(ctx)
        return T.concat(parts, axis=-1)
