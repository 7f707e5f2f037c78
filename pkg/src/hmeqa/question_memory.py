"""Question memory: slot memory over encoded words.

Unlike the video memory, each slot is blended towards the write content by its
own write weight (``m_i <- alpha_i c + (1 - alpha_i) m_i``), and there is one
hidden state ``h_q``. Within a step the write happens before the read.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import slot_scores
from .errors import ContractError
from .params import glorot_uniform


@dataclass
class QuestionMemoryState:
    M: T.Tensor  # (B, S, D)
    h_q: T.Tensor  # (B, D)


@dataclass
class QuestionStepTrace:
    alpha: np.ndarray  # (B, S)
    beta: np.ndarray


def init_question_memory(scope, rng, in_dim, mem_dim, n_slots):
    D = mem_dim

    def w(shape):
        return glorot_uniform(rng, shape)

    scope.add("W_oc", w((in_dim, D)))
    scope.add("W_hc", w((D, D)))
    scope.add("b_c", np.zeros(D))
    scope.add("W_ca", w((D, D)))
    scope.add("W_ha", w((D, D)))
    scope.add("b_a", np.zeros(D))
    for name in ("write", "read"):
        head = scope.scope(name)
        head.add("v", w((D,)))
        head.add("U", w((D, D)))
        head.add("K", w((n_slots, D)))
    scope.add("W_cb", w((D, D)))
    scope.add("W_hb", w((D, D)))
    scope.add("b_b", np.zeros(D))
    scope.add("W_oh", w((in_dim, D)))
    scope.add("W_rh", w((D, D)))
    scope.add("W_hh", w((D, D)))
    scope.add("b_h", np.zeros(D))


class QuestionMemory:
    def __init__(self, scope, n_slots, mem_dim, strict_eq=False):
        self.p = scope
        self.n_slots = n_slots
        self.mem_dim = mem_dim
        self.strict_eq = strict_eq

    def initial_state(self, batch, dtype=np.float64):
        return QuestionMemoryState(
            M=T.Tensor(np.zeros((batch, self.n_slots, self.mem_dim)), dtype=dtype),
            h_q=T.Tensor(np.zeros((batch, self.mem_dim)), dtype=dtype),
        )

    def content(self, o_t, h_prev):
        p = self.p
        return T.sigmoid(T.affine([(o_t, p["W_oc"]), (h_prev, p["W_hc"])], p["b_c"]))

    def write_weights(self, c_t, h_prev, M):
        p = self.p
        shared = T.affine([(c_t, p["W_ca"]), (h_prev, p["W_ha"])], p["b_a"])
        return T.softmax(slot_scores(shared, M, p.scope("write"), self.strict_eq))

    @staticmethod
    def blend_slots(M, alpha, c_t):
        """Per-slot convex blend ``alpha_i c + (1 - alpha_i) m_i``."""
        return T.slot_blend(alpha, c_t, M)

    def write(self, M, c_t, h_prev):
        """Returns the write weights and the updated slot matrix."""
        alpha = self.write_weights(c_t, h_prev, M)
        return alpha, self.blend_slots(M, alpha, c_t)

    def read(self, M, c_t, h_prev):
        p = self.p
        shared = T.affine([(c_t, p["W_cb"]), (h_prev, p["W_hb"])], p["b_b"])
        beta = T.softmax(slot_scores(shared, M, p.scope("read"), self.strict_eq))
        return beta, T.weighted_rows(beta, M)

    def hidden_update(self, o_t, r, h_prev):
        p = self.p
        return T.sigmoid(T.affine([(o_t, p["W_oh"]), (r, p["W_rh"]), (h_prev, p["W_hh"])], p["b_h"]))

    def step(self, state, o_t):
        c = self.content(o_t, state.h_q)
        alpha, M = self.write(state.M, c, state.h_q)
        beta, r = self.read(M, c, state.h_q)
        h = self.hidden_update(o_t, r, state.h_q)
        return QuestionMemoryState(M, h), QuestionStepTrace(alpha.data.copy(), beta.data.copy())

    def process(self, o_q):
        """Run the memory over an encoded question batch.

        Returns ``(h_q_seq, traces)``; ``h_q_seq`` is ``(B, N, D)`` with zero
        rows past each valid length.
        """
        x = o_q.outputs
        valid_len = np.asarray(o_q.valid_len)
        if valid_len.min() < 1:
            raise ContractError("question memory needs at least one valid word")
        batch, n = x.shape[0], x.shape[1]
        dtype = x.data.dtype
        state = self.initial_state(batch, dtype)
        t_max = int(valid_len.max())
        rows, traces = [], []
        for t in range(t_max):
            new, trace = self.step(state, x[:, t])
            traces.append(trace)
            live = t < valid_len
            if live.all():
                state = new
                rows.append(new.h_q)
            else:
                m2 = live[:, None]
                state = QuestionMemoryState(
                    M=T.blend(live[:, None, None], new.M, state.M),
                    h_q=T.blend(m2, new.h_q, state.h_q),
                )
                rows.append(T.mul(new.h_q, m2.astype(dtype)))
        if t_max < n:
            rows.extend([T.Tensor(np.zeros((batch, self.mem_dim)), dtype=dtype)] * (n - t_max))
        return T.stack(rows, axis=1), traces
