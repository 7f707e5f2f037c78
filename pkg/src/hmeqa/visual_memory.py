"""Heterogeneous video memory.

Motion and appearance streams are written jointly into one slot matrix. Each
stream has its own content mapping, write head and hidden state; a
three-way modality weight decides how much of the motion write, the appearance
write and the previous memory survive. A single read head then feeds all three
hidden states, and the global hidden state ``h_v`` is the module output.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import slot_scores
from .errors import ContractError
from .params import glorot_uniform

MODALITIES = ("m", "a")


@dataclass
class VisualMemoryState:
    M: T.Tensor  # (B, S, D)
    h_m: T.Tensor  # (B, D)
    h_a: T.Tensor
    h_v: T.Tensor

    def hidden(self, modality):
        return self.h_m if modality == "m" else self.h_a


@dataclass
class VisualStepTrace:
    alpha_m: np.ndarray  # (B, S)
    alpha_a: np.ndarray
    epsilon: np.ndarray  # (B, 3)
    beta: np.ndarray  # (B, S)


def init_visual_memory(scope, rng, in_dim, mem_dim, n_slots):
    D = mem_dim

    def w(shape):
        return glorot_uniform(rng, shape)

    for mod in MODALITIES:
        s = scope.scope(mod)
        s.add("W_oc", w((in_dim, D)))
        s.add("W_hc", w((D, D)))
        s.add("b_c", np.zeros(D))
        s.add("W_ca", w((D, D)))
        s.add("W_ha", w((D, D)))
        s.add("b_a", np.zeros(D))
        head = s.scope("write")
        head.add("v", w((D,)))
        head.add("U", w((D, D)))
        head.add("K", w((n_slots, D)))
        s.add("W_hh", w((D, D)))
        s.add("W_oh", w((in_dim, D)))
        s.add("W_rh", w((D, D)))
        s.add("b_h", np.zeros(D))
    scope.add("W_he", w((D, D)))
    scope.add("W_me", w((D, D)))
    scope.add("W_ae", w((D, D)))
    scope.add("b_e", np.zeros(D))
    scope.add("V_e", w((D, 3)))
    scope.add("W_hb", w((D, D)))
    scope.add("W_mb", w((D, D)))
    scope.add("W_ab", w((D, D)))
    scope.add("b_b", np.zeros(D))
    head = scope.scope("read")
    head.add("v", w((D,)))
    head.add("U", w((D, D)))
    head.add("K", w((n_slots, D)))
    sv = scope.scope("v")
    sv.add("W_hh", w((D, D)))
    sv.add("W_rh", w((D, D)))
    sv.add("b_h", np.zeros(D))


class VisualMemory:
    """Operations of the heterogeneous memory over one parameter scope."""

    def __init__(self, scope, n_slots, mem_dim, strict_eq=False):
        self.p = scope
        self.n_slots = n_slots
        self.mem_dim = mem_dim
        self.strict_eq = strict_eq

    def initial_state(self, batch, dtype=np.float64):
        z = np.zeros((batch, self.mem_dim), dtype=dtype)
        return VisualMemoryState(
            M=T.Tensor(np.zeros((batch, self.n_slots, self.mem_dim)), dtype=dtype),
            h_m=T.Tensor(z, dtype=dtype),
            h_a=T.Tensor(z, dtype=dtype),
            h_v=T.Tensor(z, dtype=dtype),
        )

    def content(self, o_t, h_prev, modality):
        """Content to write: sigmoid(o_t W_oc + h_prev W_hc + b_c) for one stream."""
        s = self.p.scope(modality)
        return T.sigmoid(T.affine([(o_t, s["W_oc"]), (h_prev, s["W_hc"])], s["b_c"]))

    def write_weights(self, c_t, h_prev, M, modality):
        s = self.p.scope(modality)
        shared = T.affine([(c_t, s["W_ca"]), (h_prev, s["W_ha"])], s["b_a"])
        return T.softmax(slot_scores(shared, M, s.scope("write"), self.strict_eq))

    def modality_weights(self, h_v, c_m, c_a):
        """Three-way softmax over (motion write, appearance write, retention)."""
        p = self.p
        feat = T.tanh(T.affine([(h_v, p["W_he"]), (c_m, p["W_me"]), (c_a, p["W_ae"])], p["b_e"]))
        return T.softmax(T.matmul(feat, p["V_e"]))

    @staticmethod
    def update(M_prev, alpha_m, alpha_a, c_m, c_a, eps):
        """M_t = eps_1 (alpha_m x c_m) + eps_2 (alpha_a x c_a) + eps_3 M_prev."""
        return T.memory_mix(eps, [(alpha_m, c_m), (alpha_a, c_a)], M_prev)

    def read(self, M, h_v, c_m, c_a):
        p = self.p
        shared = T.affine([(h_v, p["W_hb"]), (c_m, p["W_mb"]), (c_a, p["W_ab"])], p["b_b"])
        beta = T.softmax(slot_scores(shared, M, p.scope("read"), self.strict_eq))
        return beta, T.weighted_rows(beta, M)

    def hidden_update(self, state, o_m, o_a, r):
        """New (h_m, h_a, h_v). The global state h_v takes no direct input term."""
        out = []
        for mod, o_t in (("m", o_m), ("a", o_a)):
            s = self.p.scope(mod)
            out.append(T.sigmoid(T.affine(
                [(state.hidden(mod), s["W_hh"]), (o_t, s["W_oh"]), (r, s["W_rh"])], s["b_h"])))
        sv = self.p.scope("v")
        out.append(T.sigmoid(T.affine([(state.h_v, sv["W_hh"]), (r, sv["W_rh"])], sv["b_h"])))
        return tuple(out)

    def step(self, state, o_m, o_a, force_epsilon=None):
        """One full write/read/update cycle for frame inputs ``o_m``, ``o_a``."""
        c_m = self.content(o_m, state.h_m, "m")
        c_a = self.content(o_a, state.h_a, "a")
        alpha_m = self.write_weights(c_m, state.h_m, state.M, "m")
        alpha_a = self.write_weights(c_a, state.h_a, state.M, "a")
        eps = self.modality_weights(state.h_v, c_m, c_a)
        if force_epsilon is not None:
            eps = T.Tensor(np.broadcast_to(force_epsilon, eps.shape), dtype=eps.data.dtype)
        M = self.update(state.M, alpha_m, alpha_a, c_m, c_a, eps)
        beta, r = self.read(M, state.h_v, c_m, c_a)
        h_m, h_a, h_v = self.hidden_update(state, o_m, o_a, r)
        trace = VisualStepTrace(alpha_m.data.copy(), alpha_a.data.copy(), eps.data.copy(), beta.data.copy())
        return VisualMemoryState(M, h_m, h_a, h_v), trace

    def process(self, o_m, o_a, force_epsilon=None, return_state=False):
        """Run the memory over two frame-aligned encoded streams.

        Returns ``(h_v_seq, traces)`` where ``h_v_seq`` is ``(B, N, D)`` with
        zero rows past each valid length and ``traces`` holds one entry per
        executed step (up to the longest valid length in the batch).
        """
        if not np.array_equal(o_m.valid_len, o_a.valid_len) or o_m.outputs.shape[:2] != o_a.outputs.shape[:2]:
            raise ContractError("motion and appearance streams are not frame-aligned")
        xm, xa = o_m.outputs, o_a.outputs
        valid_len = o_m.valid_len
        batch, n = xm.shape[0], xm.shape[1]
        dtype = xm.data.dtype
        state = self.initial_state(batch, dtype)
        t_max = int(valid_len.max())
        rows, traces = [], []
        for t in range(t_max):
            new, trace = self.step(state, xm[:, t], xa[:, t], force_epsilon)
            traces.append(trace)
            live = t < valid_len
            if live.all():
                state = new
                rows.append(new.h_v)
            else:
                m2 = live[:, None]
                state = VisualMemoryState(
                    M=T.blend(live[:, None, None], new.M, state.M),
                    h_m=T.blend(m2, new.h_m, state.h_m),
                    h_a=T.blend(m2, new.h_a, state.h_a),
                    h_v=T.blend(m2, new.h_v, state.h_v),
                )
                rows.append(T.mul(new.h_v, m2.astype(dtype)))
        if t_max < n:
            rows.extend([T.Tensor(np.zeros((batch, self.mem_dim)), dtype=dtype)] * (n - t_max))
        h_v_seq = T.stack(rows, axis=1)
        if return_state:
            return h_v_seq, traces, state
        return h_v_seq, traces
