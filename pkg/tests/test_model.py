import numpy as np
import pytest

from conftest import random_records, tiny_config
from hmeqa import tensor as T
from hmeqa.config import VARIANTS
from hmeqa.data import collate, generate_synthetic
from hmeqa.gradcheck import grad_check
from hmeqa.model import HMEModel, build_params

H = 8


def forward(variant, task="open", count=3, **changes):
    cfg = tiny_config(variant=variant, task=task, **changes)
    model = HMEModel(cfg)
    records = generate_synthetic(task, count, 0, n_frames=cfg.frames)
    batch = collate(records)
    return model, batch, model.forward(batch)


class TestVariants:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_open_shapes(self, variant):
        model, batch, out = forward(variant)
        finals = H if variant == "EF" else 2 * H
        assert out.logits.shape == (3, 10)
        assert out.s_L.shape == (3, model.cfg.ctrl_dim)
        assert out.s_A.shape == (3, model.cfg.ctrl_dim + finals)
        assert len(out.traces["fusion"]) == model.cfg.reasoning_steps
        assert bool(out.traces["visual"]) == (variant in ("VM", "VQ"))
        assert bool(out.traces["question"]) == (variant in ("QM", "VQ"))
        loss, _ = model.loss(batch, out)
        assert np.isfinite(loss.item())

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_multiple_choice_shapes(self, variant):
        model, batch, out = forward(variant, task="mc")
        assert out.logits.shape == (3, 4)
        assert out.s_A.shape[0] == 12
        assert out.predictions.shape == (3,)

    def test_parameter_banks(self):
        names = {v: build_params(tiny_config(variant=v)).names() for v in VARIANTS}
        assert any(n.startswith("enc.ef.") for n in names["EF"])
        assert not any(n.startswith(("enc.m.", "vm.", "qm.")) for n in names["EF"])
        assert not any(n.startswith(("vm.", "qm.")) for n in names["LF"])
        assert any(n.startswith("vm.") for n in names["VM"]) and not any(n.startswith("qm.") for n in names["VM"])
        assert any(n.startswith("qm.") for n in names["QM"]) and not any(n.startswith("vm.") for n in names["QM"])
        assert any(n.startswith("vm.") for n in names["VQ"]) and any(n.startswith("qm.") for n in names["VQ"])

    def test_head_on_controller_state(self):
        model, batch, out = forward("VQ", open_head_input="s_L")
        assert model.params["head.open.W"].shape == (model.cfg.ctrl_dim, 10)
        assert out.logits.shape == (3, 10)

    def test_float32(self):
        with T.default_dtype("float32"):
            model, batch, out = forward("VQ", precision="float32")
        assert out.logits.data.dtype == np.float32
        assert all(t.data.dtype == np.float32 for t in model.params.values())

    def test_step_override(self):
        model, batch, _ = forward("VQ")
        assert len(model.forward(batch, steps=5).traces["fusion"]) == 5


class TestBatchIndependence:
    @pytest.mark.parametrize("variant", ["EF", "VQ"])
    def test_rows_independent(self, variant, rng):
        cfg = tiny_config(variant=variant, appearance_dim=10, motion_dim=10, vocab_size=19)
        model = HMEModel(cfg)
        records = random_records(rng, 5)
        together = model.forward(collate(records)).logits.data
        for k, r in enumerate(records):
            alone = model.forward(collate([r])).logits.data[0]
            np.testing.assert_allclose(together[k], alone, rtol=0, atol=1e-12)

    def test_candidate_order_equivariant(self):
        model = HMEModel(tiny_config(variant="VQ", task="mc"))
        rec = generate_synthetic("mc", 1, 5, n_frames=4)[0]
        base = model.forward(collate([rec])).logits.data[0]
        perm = [2, 0, 3, 1]
        rec.candidates = [rec.candidates[i] for i in perm]
        rec.positive = perm.index(rec.positive)
        np.testing.assert_allclose(model.forward(collate([rec])).logits.data[0], base[perm], rtol=0, atol=1e-12)


class TestParams:
    def test_seeded(self):
        a, b = build_params(tiny_config(seed=3)), build_params(tiny_config(seed=3))
        c = build_params(tiny_config(seed=4))
        assert all(a[n].data.tobytes() == b[n].data.tobytes() for n in a)
        assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a)


class TestFullGradient:
    def objective(self, variant, task="open"):
        model = HMEModel(tiny_config(variant=variant, task=task))
        batch = collate(generate_synthetic(task, 1, 0, n_frames=4))
        return (lambda: model.loss(batch)[0]), model.params

    def test_early_fusion_five_point_stencil(self):
        f, params = self.objective("EF")
        assert grad_check(f, params, h=1e-3, order=4) < 1e-4
