import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import loop_oracles as O
from conftest import randomize, random_sequence, subset, tiny_config
from hmeqa import tensor as T
from hmeqa.errors import ContractError
from hmeqa.gradcheck import grad_check
from hmeqa.model import build_params
from hmeqa.params import ParameterSet
from hmeqa.visual_memory import VisualMemory, VisualMemoryState

S, D, H = 3, 8, 8


def make(seed, strict_eq=False, slots=S):
    rng = np.random.default_rng(seed)
    params = randomize(build_params(tiny_config(visual_slots=slots)), rng)
    return params, VisualMemory(params.scope("vm"), slots, D, strict_eq), rng


def zero_all(params, prefix="vm."):
    for name, t in params.items():
        if name.startswith(prefix):
            t.data = np.zeros(t.shape)


def rand_state(rng, batch, slots=S):
    return VisualMemoryState(
        M=T.Tensor(rng.uniform(0, 1, size=(batch, slots, D))),
        h_m=T.Tensor(rng.uniform(0, 1, size=(batch, D))),
        h_a=T.Tensor(rng.uniform(0, 1, size=(batch, D))),
        h_v=T.Tensor(rng.uniform(0, 1, size=(batch, D))),
    )


class TestContent:
    def test_zero_params(self):
        params, vm, rng = make(0)
        zero_all(params)
        c = vm.content(T.Tensor(rng.normal(size=(2, H))), T.Tensor(rng.normal(size=(2, D))), "m")
        np.testing.assert_array_equal(c.data, 0.5)

    def test_bias_only(self):
        params, vm, rng = make(1)
        c = vm.content(T.Tensor(np.zeros(H)), T.Tensor(np.zeros(D)), "a")
        np.testing.assert_allclose(c.data, 1 / (1 + np.exp(-params["vm.a.b_c"].data)), atol=1e-15)

    def test_open_unit_interval(self):
        params, vm, rng = make(2)
        c = vm.content(T.Tensor(rng.normal(size=(20, H))), T.Tensor(rng.normal(size=(20, D))), "m")
        assert ((c.data > 0) & (c.data < 1)).all()


class TestWriteWeights:
    def test_zero_v_uniform(self):
        params, vm, rng = make(3)
        params["vm.m.write.v"].data = np.zeros(D)
        st_ = rand_state(rng, 2)
        alpha = vm.write_weights(T.Tensor(rng.uniform(size=(2, D))), st_.h_m, st_.M, "m")
        np.testing.assert_allclose(alpha.data, 1 / S, atol=1e-15)

    def test_single_slot(self):
        params, vm, rng = make(4, slots=1)
        st_ = rand_state(rng, 2, slots=1)
        alpha = vm.write_weights(T.Tensor(rng.uniform(size=(2, D))), st_.h_a, st_.M, "a")
        np.testing.assert_array_equal(alpha.data, 1.0)

    def test_slots_distinct_by_default(self):
        params, vm, rng = make(5)
        st_ = rand_state(rng, 1)
        alpha = vm.write_weights(T.Tensor(rng.uniform(size=(1, D))), st_.h_m, st_.M, "m").data
        assert np.ptp(alpha) > 1e-3

    def test_strict_eq_uniform(self):
        params, vm, rng = make(6, strict_eq=True)
        st_ = rand_state(rng, 4)
        alpha = vm.write_weights(T.Tensor(rng.uniform(size=(4, D))), st_.h_m, st_.M, "m")
        np.testing.assert_allclose(alpha.data, 1 / S, atol=1e-15)
        beta, r = vm.read(st_.M, st_.h_v, T.Tensor(rng.uniform(size=(4, D))), T.Tensor(rng.uniform(size=(4, D))))
        np.testing.assert_allclose(beta.data, 1 / S, atol=1e-15)


class TestModalityWeights:
    def test_zero_head_uniform(self):
        params, vm, rng = make(7)
        params["vm.V_e"].data = np.zeros((D, 3))
        st_ = rand_state(rng, 2)
        eps = vm.modality_weights(st_.h_v, st_.h_m, st_.h_a)
        np.testing.assert_allclose(eps.data, 1 / 3, atol=1e-15)

    def test_saturated(self):
        params, vm, rng = make(8)
        zero_all(params)
        params["vm.b_e"].data[0] = math.atanh(0.5)
        params["vm.V_e"].data[0] = [20.0, -20.0, -20.0]
        z = T.Tensor(np.zeros((1, D)))
        eps = vm.modality_weights(z, z, z).data[0]
        np.testing.assert_allclose(eps, [1.0, 0.0, 0.0], atol=1e-8)

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(T.softmax(logits).data, T.softmax(logits + 7.5).data, atol=1e-15)


class TestUpdate:
    def test_pure_retention(self):
        rng = np.random.default_rng(9)
        M = rng.normal(size=(2, S, D))
        a, c = rng.uniform(size=(2, S)), rng.uniform(size=(2, D))
        out = VisualMemory.update(T.Tensor(M), a, a, c, c, np.tile([0.0, 0.0, 1.0], (2, 1)))
        assert out.data.tobytes() == M.tobytes()

    def test_one_hot_write(self):
        rng = np.random.default_rng(10)
        c_m = rng.uniform(size=D)
        one_hot = np.eye(S)[1]
        out = VisualMemory.update(T.Tensor(np.zeros((S, D))), one_hot, rng.uniform(size=S), c_m,
                                  rng.uniform(size=D), np.array([1.0, 0.0, 0.0])).data
        np.testing.assert_array_equal(out[1], c_m)
        assert (out[[0, 2]] == 0).all()


class TestRead:
    def test_identical_slots(self):
        params, vm, rng = make(11)
        m_star = rng.normal(size=D)
        M = T.Tensor(np.tile(m_star, (2, S, 1)))
        st_ = rand_state(rng, 2)
        beta, r = vm.read(M, st_.h_v, st_.h_m, st_.h_a)
        np.testing.assert_allclose(r.data, np.tile(m_star, (2, 1)), atol=1e-15)

    def test_one_hot_selects_row(self):
        rng = np.random.default_rng(12)
        M = rng.normal(size=(S, D))
        np.testing.assert_array_equal(T.weighted_rows(np.eye(S)[2], M).data, M[2])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_convexity(self, seed):
        params, vm, rng = make(seed)
        st_ = rand_state(rng, 3)
        M = T.Tensor(rng.normal(size=(3, S, D)))
        beta, r = vm.read(M, st_.h_v, st_.h_m, st_.h_a)
        lo, hi = M.data.min(axis=1), M.data.max(axis=1)
        assert (r.data >= lo - 1e-15).all() and (r.data <= hi + 1e-15).all()


class TestHiddenUpdate:
    def test_zero_params(self):
        params, vm, rng = make(13)
        zero_all(params)
        st_ = rand_state(rng, 2)
        outs = vm.hidden_update(st_, T.Tensor(rng.normal(size=(2, H))), T.Tensor(rng.normal(size=(2, H))),
                                T.Tensor(rng.normal(size=(2, D))))
        for h in outs:
            np.testing.assert_array_equal(h.data, 0.5)

    def test_range(self):
        params, vm, rng = make(14)
        st_ = rand_state(rng, 5)
        outs = vm.hidden_update(st_, T.Tensor(rng.normal(size=(5, H))), T.Tensor(rng.normal(size=(5, H))),
                                T.Tensor(rng.normal(size=(5, D))))
        for h in outs:
            assert ((h.data > 0) & (h.data < 1)).all()

    def test_global_state_ignores_frame_input(self):
        params, vm, rng = make(15)
        st_ = rand_state(rng, 2)
        r = T.Tensor(rng.normal(size=(2, D)))
        a = vm.hidden_update(st_, T.Tensor(rng.normal(size=(2, H))), T.Tensor(rng.normal(size=(2, H))), r)[2]
        b = vm.hidden_update(st_, T.Tensor(rng.normal(size=(2, H))), T.Tensor(rng.normal(size=(2, H))), r)[2]
        assert a.data.tobytes() == b.data.tobytes()


class TestOracle:
    """Vectorised step functions against the scalar loops on 50 random cases."""

    @pytest.mark.parametrize("seed", range(50))
    def test_step_functions(self, seed):
        params, vm, rng = make(100 + seed)
        B = 2
        st_ = rand_state(rng, B)
        o_m, o_a = rng.uniform(-1, 1, size=(B, H)), rng.uniform(-1, 1, size=(B, H))
        c_m = vm.content(T.Tensor(o_m), st_.h_m, "m")
        c_a = vm.content(T.Tensor(o_a), st_.h_a, "a")
        al_m = vm.write_weights(c_m, st_.h_m, st_.M, "m")
        al_a = vm.write_weights(c_a, st_.h_a, st_.M, "a")
        eps = vm.modality_weights(st_.h_v, c_m, c_a)
        M = vm.update(st_.M, al_m, al_a, c_m, c_a, eps)
        beta, r = vm.read(M, st_.h_v, c_m, c_a)
        hid = vm.hidden_update(st_, T.Tensor(o_m), T.Tensor(o_a), r)
        for b in range(B):
            M0 = st_.M.data[b].tolist()
            hm, ha, hv = (x.data[b].tolist() for x in (st_.h_m, st_.h_a, st_.h_v))
            want_cm = O.vm_content(params, o_m[b].tolist(), hm, "m")
            want_ca = O.vm_content(params, o_a[b].tolist(), ha, "a")
            close = lambda got, want: np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)  # noqa: E731
            close(c_m.data[b], want_cm)
            close(c_a.data[b], want_ca)
            want_alm = O.vm_write_weights(params, want_cm, hm, M0, "m")
            want_ala = O.vm_write_weights(params, want_ca, ha, M0, "a")
            close(al_m.data[b], want_alm)
            close(al_a.data[b], want_ala)
            want_eps = O.vm_modality_weights(params, hv, want_cm, want_ca)
            close(eps.data[b], want_eps)
            want_M = O.vm_update(M0, want_alm, want_ala, want_cm, want_ca, want_eps)
            close(M.data[b], want_M)
            want_beta, want_r = O.vm_read(params, want_M, hv, want_cm, want_ca)
            close(beta.data[b], want_beta)
            close(r.data[b], want_r)
            want_h = O.vm_hidden(params, hm, ha, hv, o_m[b].tolist(), o_a[b].tolist(), want_r)
            for got, want in zip(hid, want_h):
                close(got.data[b], want)

    @pytest.mark.parametrize("seed", range(10))
    def test_process(self, seed):
        params, vm, rng = make(200 + seed)
        o_m = random_sequence(rng, 3, 5, H)
        o_a = random_sequence(rng, 3, 5, H, lengths=o_m.valid_len)
        h_seq, traces = vm.process(o_m, o_a)
        for b in range(3):
            n = o_m.valid_len[b]
            rows, tr = O.vm_process(params, o_m.outputs.data[b, :n].tolist(), o_a.outputs.data[b, :n].tolist(), S, D)
            np.testing.assert_allclose(h_seq.data[b, :n], rows, rtol=0, atol=1e-12)
            assert (h_seq.data[b, n:] == 0).all()
            for t in range(n):
                for got, want in zip((traces[t].alpha_m, traces[t].alpha_a, traces[t].epsilon, traces[t].beta), tr[t]):
                    np.testing.assert_allclose(got[b], want, rtol=0, atol=1e-12)


class TestProcess:
    def test_single_frame(self):
        params, vm, rng = make(20)
        o = random_sequence(rng, 1, 4, H, lengths=[1])
        h_seq, traces = vm.process(o, random_sequence(rng, 1, 4, H, lengths=[1]))
        assert len(traces) == 1
        assert np.flatnonzero(np.abs(h_seq.data[0]).sum(axis=-1)).tolist() == [0]

    def test_misaligned(self):
        params, vm, rng = make(21)
        with pytest.raises(ContractError):
            vm.process(random_sequence(rng, 2, 4, H, lengths=[4, 2]), random_sequence(rng, 2, 4, H, lengths=[4, 3]))

    def test_retention_identity(self):
        params, vm, rng = make(22)
        o_m = random_sequence(rng, 3, 6, H)
        o_a = random_sequence(rng, 3, 6, H, lengths=o_m.valid_len)
        _, _, state = vm.process(o_m, o_a, force_epsilon=np.array([0.0, 0.0, 1.0]), return_state=True)
        assert state.M.data.tobytes() == np.zeros((3, S, D)).tobytes()

    def test_stream_swap_symmetry(self):
        params, vm, rng = make(23)
        swapped = ParameterSet()
        rename = {"vm.m.": "vm.a.", "vm.a.": "vm.m."}
        pairs = {"vm.W_me": "vm.W_ae", "vm.W_ae": "vm.W_me", "vm.W_mb": "vm.W_ab", "vm.W_ab": "vm.W_mb"}
        for name, t in params.items():
            new = pairs.get(name, name)
            for a, b in rename.items():
                if name.startswith(a):
                    new = b + name[len(a):]
            swapped.add(new, t.data.copy())
        swapped["vm.V_e"].data = params["vm.V_e"].data[:, [1, 0, 2]].copy()
        vm2 = VisualMemory(swapped.scope("vm"), S, D)
        o_m = random_sequence(rng, 2, 5, H)
        o_a = random_sequence(rng, 2, 5, H, lengths=o_m.valid_len)
        a, _ = vm.process(o_m, o_a)
        b, _ = vm2.process(o_a, o_m)
        np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), strict=st.booleans())
    def test_trace_distributions(self, seed, strict):
        params, vm, rng = make(seed, strict_eq=strict)
        o_m = random_sequence(rng, 3, 5, H)
        o_a = random_sequence(rng, 3, 5, H, lengths=o_m.valid_len)
        _, traces = vm.process(o_m, o_a)
        for tr in traces:
            for w in (tr.alpha_m, tr.alpha_a, tr.beta):
                assert (w >= 0).all() and np.abs(w.sum(-1) - 1).max() <= 1e-10
            assert (tr.epsilon >= 0).all() and np.abs(tr.epsilon.sum(-1) - 1).max() <= 1e-12

    def _three_step_objective(self):
        params, vm, rng = make(24)
        o_m = random_sequence(rng, 2, 3, H, lengths=[3, 3], requires_grad=True)
        o_a = random_sequence(rng, 2, 3, H, lengths=[3, 3], requires_grad=True)
        R = rng.uniform(-1, 1, size=(2, 3, D))
        f = lambda: T.tsum(T.mul(vm.process(o_m, o_a)[0], R))  # noqa: E731
        named = dict(subset(params, "vm.").items())
        named["o_m"], named["o_a"] = o_m.outputs, o_a.outputs
        return f, named

    def test_gradient_three_steps(self):
        f, named = self._three_step_objective()
        assert grad_check(f, named) < 1e-4

    def test_gradient_three_steps_five_point_stencil(self):
        f, named = self._three_step_objective()
        assert grad_check(f, named, h=1e-3, order=4) < 1e-4
