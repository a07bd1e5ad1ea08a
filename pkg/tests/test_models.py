"""Network assembly: shapes, heads, transfer, composition, checkpoints."""
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petrecon.models import (EncoderDecoderConfig, EncoderDecoderNet,
                             build_coarse_net, build_pretrain_net,
                             build_refine_net, compose_rpet, load_net,
                             predict_rpet, save_net, transfer_encoder)
from petrecon.nn import ResidualBlock, ShapeError, mse_loss, mse_loss_grad

from helpers import max_rel_err, numerical_grad_at, random_params_subset


def _rand_input(shape, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(dtype)


class TestConfig:
    def test_depth_validation(self):
        with pytest.raises(ValueError, match="depth"):
            EncoderDecoderConfig(depth=3)

    def test_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderDecoderConfig(depth=4, input_size=24)
        EncoderDecoderConfig(depth=2, input_size=24)  # 24 % 4 == 0

    def test_widths(self):
        cfg = EncoderDecoderConfig(base_channels=16, depth=4)
        assert cfg.encoder_widths == [16, 32, 64, 128]
        assert cfg.bottleneck_channels == 128
        cfg2 = EncoderDecoderConfig(in_channels=2, base_channels=16, depth=2)
        assert cfg2.encoder_widths == [16, 32]


class TestPretrainNet:
    def test_shapes_and_bottleneck(self):
        net = build_pretrain_net(32, base_channels=16, seed=1)
        x = _rand_input((4, 1, 32, 32))
        feats = net.encode(x)
        assert feats.shape == (4, 128, 2, 2)
        recon, logits = net.forward(x)
        assert recon.shape == (4, 1, 32, 32)
        assert logits.shape == (4, 3)

    def test_eval_determinism(self):
        net = build_pretrain_net(32, base_channels=8, seed=2)
        x = _rand_input((2, 1, 32, 32))
        r1, l1 = net.forward(x, training=False)
        r2, l2 = net.forward(x, training=False)
        npt.assert_array_equal(r1, r2)
        npt.assert_array_equal(l1, l2)

    def test_classifier_head_does_not_change_recon(self):
        # same seed, with and without head: trunk draws are identical
        with_head = build_pretrain_net(32, base_channels=8, seed=3)
        without = build_coarse_net(32, base_channels=8, seed=3)
        x = _rand_input((2, 1, 32, 32))
        recon_a, _ = with_head.forward(x, training=False)
        recon_b = without.forward(x, training=False)
        npt.assert_array_equal(recon_a, recon_b)

    def test_wrong_input_size_rejected(self):
        net = build_pretrain_net(32, base_channels=8, seed=0)
        with pytest.raises(ShapeError, match="spatial"):
            net.forward(_rand_input((1, 1, 16, 16)))

    def test_parameter_count_difference_is_classifier(self):
        pre = build_pretrain_net(32, base_channels=16, seed=0)
        coarse = build_coarse_net(32, base_channels=16, seed=0)
        cls_params = sum(p.data.size for p in pre.parameters()
                         if p.name.startswith("cls."))
        assert cls_params > 0
        assert pre.parameter_count() == coarse.parameter_count() + cls_params

    def test_no_skip_paths(self):
        # with the bottleneck zeroed, the decoder output cannot depend on
        # the input image
        net = build_pretrain_net(32, base_channels=8, seed=4)
        a = _rand_input((1, 1, 32, 32), seed=10)
        b = _rand_input((1, 1, 32, 32), seed=11)
        net.encode(a, training=False)
        out_a = net.decode(np.zeros((1, 64, 2, 2), dtype=np.float32), training=False)
        net.encode(b, training=False)
        out_b = net.decode(np.zeros((1, 64, 2, 2), dtype=np.float32), training=False)
        npt.assert_array_equal(out_a, out_b)

    def test_forward_finite_over_random_inputs(self):
        net = build_pretrain_net(32, base_channels=8, seed=5)
        for batch_seed in range(10):
            x = _rand_input((10, 1, 32, 32), seed=batch_seed)
            recon, logits = net.forward(x, training=False)
            assert np.all(np.isfinite(recon))
            assert np.all(np.isfinite(logits))


class TestResidualBlock:
    def test_zero_weights_pass_relu(self):
        rng = np.random.default_rng(0)
        block = ResidualBlock(3, "blk", rng, np.float64)
        for layer in (block.conv1, block.conv2):
            layer.w.data[...] = 0.0
            layer.b.data[...] = 0.0
        x = rng.standard_normal((1, 3, 5, 5))
        npt.assert_array_equal(block.forward(x), np.maximum(x, 0.0))

    def test_shape_preserved(self):
        rng = np.random.default_rng(1)
        block = ResidualBlock(4, "blk", rng, np.float64)
        x = rng.standard_normal((2, 4, 6, 6))
        assert block.forward(x).shape == x.shape

    def test_gradient(self):
        rng = np.random.default_rng(2)
        block = ResidualBlock(2, "blk", rng, np.float64)
        x = rng.standard_normal((1, 2, 4, 4)) + 0.3
        target = rng.standard_normal((1, 2, 4, 4))

        def loss_fn(_):
            return mse_loss(block.forward(x), target)

        out = block.forward(x)
        for p in block.tensors():
            p.zero_grad()
        block.backward(mse_loss_grad(out, target))
        for p in block.tensors():
            coords = random_params_subset(rng, p.data.size, 5)
            numeric = numerical_grad_at(lambda _: loss_fn(None), p.data, coords)
            analytic = p.grad.reshape(-1)[coords]
            assert max_rel_err(analytic, numeric) < 1e-3, p.name


class TestCoarseAndRefine:
    def test_coarse_shape(self):
        net = build_coarse_net(32, base_channels=8, seed=1)
        y = net.forward(_rand_input((1, 1, 32, 32)))
        assert y.shape == (1, 1, 32, 32)

    def test_shared_encoder_reproduces_bottleneck(self):
        pre = build_pretrain_net(32, base_channels=8, seed=7)
        coarse = build_coarse_net(32, base_channels=8, seed=99)
        transfer_encoder(pre, coarse)
        x = _rand_input((2, 1, 32, 32))
        npt.assert_array_equal(pre.encode(x, training=False),
                               coarse.encode(x, training=False))

    def test_refine_shape_and_signed_output(self):
        net = build_refine_net(32, base_channels=8, seed=2)
        # zero the output head weights and pull its bias negative: the
        # linear head must pass negative values through
        net.out_conv.w.data[...] = 0.0
        net.out_conv.b.data[...] = -1.0
        pair = _rand_input((1, 2, 32, 32))
        out = net.forward(pair, training=False)
        assert out.shape == (1, 1, 32, 32)
        npt.assert_allclose(out, -1.0, atol=1e-6)

    def test_refine_rejects_mismatched_pair(self):
        net = build_refine_net(32, base_channels=8, seed=3)
        with pytest.raises(ShapeError):
            net.forward(_rand_input((1, 1, 32, 32)))

    def test_predict_rpet_without_refine_clamps(self):
        net = build_coarse_net(32, base_channels=8, seed=4)
        out = predict_rpet(net, None, _rand_input((2, 1, 32, 32)))
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestComposeRpet:
    def test_zero_residual(self):
        coarse = _rand_input((1, 1, 8, 8))
        npt.assert_array_equal(compose_rpet(coarse, np.zeros_like(coarse)),
                               np.clip(coarse, 0.0, 1.0))

    def test_clamping(self):
        coarse = np.array([[0.5]])
        residual = np.array([[0.7]])
        npt.assert_array_equal(compose_rpet(coarse, residual), [[1.0]])
        npt.assert_array_equal(compose_rpet(coarse, np.array([[-0.9]])), [[0.0]])

    def test_true_residual_recovers_target_exactly(self):
        # dyadic values make the float arithmetic exact
        rng = np.random.default_rng(5)
        spet = rng.integers(0, 1025, (16, 16)).astype(np.float32) / 1024.0
        coarse = rng.integers(0, 1025, (16, 16)).astype(np.float32) / 1024.0
        npt.assert_array_equal(compose_rpet(coarse, spet - coarse), spet)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compose_rpet(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_compose_identity_on_dyadic_grids(seed):
    rng = np.random.default_rng(seed)
    spet = rng.integers(0, 257, (8, 8)).astype(np.float32) / 256.0
    coarse = rng.integers(0, 257, (8, 8)).astype(np.float32) / 256.0
    npt.assert_array_equal(compose_rpet(coarse, spet - coarse), spet)


class TestTransferEncoder:
    def test_copy_is_bitwise_and_by_value(self):
        pre = build_pretrain_net(32, base_channels=8, seed=11)
        coarse = build_coarse_net(32, base_channels=8, seed=12)
        transfer_encoder(pre, coarse)
        pre_state = pre.state_dict()
        for p in coarse.tensors():
            if p.name.startswith("enc."):
                npt.assert_array_equal(p.data, pre_state[p.name])
        # mutating dest afterwards leaves source untouched
        victim = next(p for p in coarse.tensors() if p.name.startswith("enc."))
        before = pre_state[victim.name].copy()
        victim.data += 1.0
        npt.assert_array_equal(pre.state_dict()[victim.name], before)

    def test_decoder_untouched(self):
        pre = build_pretrain_net(32, base_channels=8, seed=13)
        coarse = build_coarse_net(32, base_channels=8, seed=14)
        dec_before = {p.name: p.data.copy() for p in coarse.tensors()
                      if not p.name.startswith("enc.")}
        transfer_encoder(pre, coarse)
        for p in coarse.tensors():
            if not p.name.startswith("enc."):
                npt.assert_array_equal(p.data, dec_before[p.name])

    def test_mismatched_widths_rejected(self):
        pre = build_pretrain_net(32, base_channels=8, seed=15)
        coarse = build_coarse_net(32, base_channels=16, seed=16)
        with pytest.raises(ValueError, match="enc\\."):
            transfer_encoder(pre, coarse)

    def test_batchnorm_running_stats_transferred(self):
        pre = build_pretrain_net(32, base_channels=8, seed=17)
        # nudge running stats away from init so the copy is observable
        x = _rand_input((4, 1, 32, 32))
        pre.forward(x, training=True)
        coarse = build_coarse_net(32, base_channels=8, seed=18)
        transfer_encoder(pre, coarse)
        pre_state = pre.state_dict()
        for p in coarse.tensors():
            if p.name.startswith("enc.") and "running" in p.name:
                npt.assert_array_equal(p.data, pre_state[p.name])


class TestNetCheckpoint:
    def test_roundtrip_bitwise_forward(self, tmp_path):
        net = build_pretrain_net(32, base_channels=8, seed=21)
        x = _rand_input((2, 1, 32, 32))
        net.forward(x, training=True)  # move BN running stats off init
        expected_recon, expected_logits = net.forward(x, training=False)
        save_net(net, tmp_path / "net.ckpt")
        restored = load_net(tmp_path / "net.ckpt")
        assert restored.config == net.config
        recon, logits = restored.forward(x, training=False)
        npt.assert_array_equal(recon, expected_recon)
        npt.assert_array_equal(logits, expected_logits)

    def test_refine_net_roundtrip(self, tmp_path):
        net = build_refine_net(32, base_channels=8, seed=22)
        save_net(net, tmp_path / "refine.ckpt")
        restored = load_net(tmp_path / "refine.ckpt")
        x = _rand_input((1, 2, 32, 32))
        npt.assert_array_equal(restored.forward(x, training=False),
                               net.forward(x, training=False))
