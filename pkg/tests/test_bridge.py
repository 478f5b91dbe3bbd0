import numpy as np
import pytest

from mcmotion.bridge import BridgeModule, build_mcm, mcm_forward, set_stage
from mcmotion.conditioning import encode_text_batch
from mcmotion.errors import ValidationError
from mcmotion.mwnet import ModelConfig, mwnet_forward
from mcmotion.nn import Adam, param_checksum
from mcmotion.training import TrainConfig, build_model, make_toy_dataset, train_stage2

RNG = np.random.default_rng


def small_model(perturb_seed=None, **kw):
    args = dict(d=8, d_t=8, blocks=2, heads=2, groups=2, max_len=64, d_c=8, dtype="float64", init_seed=3)
    args.update(kw)
    model = build_model(ModelConfig(**args))
    if perturb_seed is not None:
        rng = RNG(perturb_seed)  # move the zero-initialized head off zero
        for p in model.parameters():
            p.data = p.data + 0.05 * rng.standard_normal(p.data.shape)
    return model


class TestBuild:
    def test_parameter_copy_bit_exact(self):
        mcm = build_mcm(small_model())
        main = mcm.main.named_parameters()
        control = mcm.control.named_parameters()
        assert set(main) == set(control)
        for name in main:
            assert np.array_equal(main[name].data, control[name].data), name

    def test_bridges_zero(self):
        mcm = build_mcm(small_model())
        for b in mcm.bridges:
            assert np.abs(b.weight.data).max() == 0
            assert np.abs(b.bias.data).max() == 0
        assert len(mcm.bridges) == mcm.cfg.blocks

    def test_control_mutation_leaves_main_untouched(self):
        mcm = build_mcm(small_model())
        before = param_checksum(mcm.main.named_parameters())
        for p in mcm.control.parameters():
            p.data = p.data + 1.0
        assert param_checksum(mcm.main.named_parameters()) == before

    def test_bridge_module_zero_init(self):
        b = BridgeModule(5)
        assert np.all(b.weight.data == 0) and np.all(b.bias.data == 0)


class TestForward:
    def test_identity_at_init(self):
        model = small_model(perturb_seed=21)
        mcm = build_mcm(model)
        bundle = encode_text_batch([["slow", "arm"]], model.text_encoder)
        rng = RNG(1)
        for _ in range(5):
            x = rng.standard_normal((6, 263))
            sig = rng.standard_normal((6, mcm.cfg.d_c))
            a = mwnet_forward(x, 4, bundle, model).data
            b = mcm_forward(x, 4, bundle, sig, mcm).data
            assert np.abs(a - b).max() == 0.0

    def test_nonzero_bridges_break_identity(self):
        mcm = build_mcm(small_model(perturb_seed=22))
        rng = RNG(2)
        for b in mcm.bridges:
            b.weight.data = rng.standard_normal(b.weight.data.shape) * 0.1
        bundle = encode_text_batch([["slow", "arm"]], mcm.main.text_encoder)
        x = rng.standard_normal((5, 263))
        sig = np.zeros((5, mcm.cfg.d_c))  # bridges act on nonzero block outputs
        a = mwnet_forward(x, 2, bundle, mcm.main).data
        b = mcm_forward(x, 2, bundle, sig, mcm).data
        assert np.abs(a - b).max() > 1e-8

    def test_frame_mismatch_rejected(self):
        mcm = build_mcm(small_model())
        bundle = encode_text_batch([["slow"]], mcm.main.text_encoder)
        with pytest.raises(ValidationError):
            mcm_forward(np.zeros((6, 263)), 0, bundle, np.zeros((5, mcm.cfg.d_c)), mcm)

    def test_determinism(self):
        mcm = build_mcm(small_model())
        bundle = encode_text_batch([["fast", "leg"]], mcm.main.text_encoder)
        x = RNG(3).standard_normal((4, 263))
        sig = RNG(4).standard_normal((4, mcm.cfg.d_c))
        a = mcm_forward(x, 1, bundle, sig, mcm).data
        b = mcm_forward(x, 1, bundle, sig, mcm).data
        assert np.array_equal(a, b)


class TestStages:
    def test_invalid_stage(self):
        mcm = build_mcm(small_model())
        with pytest.raises(ValidationError):
            set_stage(mcm, 3)

    def test_stage2_trainable_set(self):
        mcm = build_mcm(small_model())
        set_stage(mcm, 2)
        trainable = mcm.trainable_parameters()
        assert trainable
        assert all(not n.startswith("main/") for n in trainable)
        assert any(n.startswith("bridges.") for n in trainable)
        assert any(n.startswith("control_in/") for n in trainable)

    def test_stage1_trainable_set(self):
        mcm = build_mcm(small_model())
        set_stage(mcm, 1)
        trainable = mcm.trainable_parameters()
        assert trainable and all(n.startswith("main/") for n in trainable)

    def test_stage2_step_freezes_main_and_moves_bridges(self):
        # perturbed weights stand in for a trained main branch (a zero
        # output head would block gradient flow to the bridges)
        mcm = build_mcm(small_model(perturb_seed=23))
        set_stage(mcm, 2)
        data = make_toy_dataset(8, 40, seed=5, with_control=True)
        cfg = TrainConfig(stage=2, epochs=2, batch=4, t_diff=20, beta_start=1e-3, beta_end=0.25, lr=1e-3, seed=0)
        before = mcm.main_checksum()
        train_stage2(mcm, data, cfg)
        assert mcm.main_checksum() == before
        assert max(np.abs(b.weight.data).max() for b in mcm.bridges) > 1e-6 or max(np.abs(b.bias.data).max() for b in mcm.bridges) > 1e-6

    def test_stage2_gradients_reach_control(self):
        mcm = build_mcm(small_model(perturb_seed=24))
        set_stage(mcm, 2)
        # one manual step: bridges must pass gradient into the control branch
        bundle = encode_text_batch([["slow", "arm"]], mcm.main.text_encoder)
        rng = RNG(6)
        for b in mcm.bridges:  # nonzero bridges open the gradient path
            b.weight.data = rng.standard_normal(b.weight.data.shape) * 0.1
        x = rng.standard_normal((1, 6, 263))
        sig = rng.standard_normal((1, 6, mcm.cfg.d_c))
        from mcmotion import autodiff as ad

        out = mcm_forward(x, 3, bundle, sig, mcm)
        mcm.zero_grad()
        ad.sum_(ad.square(out)).backward()
        ctrl_grads = [p.grad for n, p in mcm.control.named_parameters().items() if p.grad is not None]
        assert ctrl_grads and max(np.abs(g).max() for g in ctrl_grads) > 0

    def test_stage1_on_mcm_keeps_bridges_zero(self):
        mcm = build_mcm(small_model())
        set_stage(mcm, 1)
        opt = Adam(mcm.trainable_parameters(), lr=1e-3)
        bundle = encode_text_batch([["slow", "arm"]], mcm.main.text_encoder)
        from mcmotion import autodiff as ad
        from mcmotion.mwnet import mwnet_forward as fwd

        out = fwd(RNG(7).standard_normal((1, 5, 263)), 2, bundle, mcm.main)
        mcm.zero_grad()
        ad.sum_(ad.square(out)).backward()
        opt.step()
        assert all(np.all(b.weight.data == 0) and np.all(b.bias.data == 0) for b in mcm.bridges)
