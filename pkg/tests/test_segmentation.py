"""Dual-encoder segmentation: shapes, training behavior, mask application."""

import numpy as np
import pytest

from lesionforge import segmentation as seg
from lesionforge.synthetic import make_ellipse_pairs
from lesionforge.util import rng_for


def small_net(seed=0, dtype=np.float64):
    return seg.DualEncoderNet(seed=seed, dtype=dtype)


class TestDualEncoderNet:
    def test_mask_shape_matches_input(self):
        net = small_net()
        img = rng_for(0, "segshape").random((64, 64, 3))
        assert seg.predict_mask(net, img).shape == (64, 64)

    def test_same_seed_identical_init(self):
        a = np.concatenate([p.value.reshape(-1) for p in small_net(3).params()])
        b = np.concatenate([p.value.reshape(-1) for p in small_net(3).params()])
        np.testing.assert_array_equal(a, b)

    def test_output_bounded_by_sigmoid(self):
        net = small_net(1)
        mask = seg.predict_mask(net, rng_for(1, "segb").random((16, 16, 3)))
        assert mask.min() >= 0.0 and mask.max() <= 1.0

    def test_deterministic_prediction(self):
        net = small_net(2)
        img = rng_for(2, "segd").random((16, 16, 3))
        np.testing.assert_array_equal(seg.predict_mask(net, img),
                                      seg.predict_mask(net, img))

    def test_indivisible_dims_rejected(self):
        with pytest.raises(ValueError, match="multiples"):
            small_net().forward(np.zeros((1, 3, 30, 30)))

    def test_undersized_input_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            small_net().forward(np.zeros((1, 3, 4, 4)))

    def test_encoder_b_must_be_deeper(self):
        with pytest.raises(ValueError, match="deeper"):
            seg.DualEncoderConfig(encoder_a_depth=3, encoder_b_depth=3)


class TestTrainSegmenter:
    def test_zero_epochs_leaves_network_unchanged(self):
        net = small_net(4, dtype=np.float32)
        before = [p.value.copy() for p in net.params()]
        pairs = [(np.zeros((8, 8, 3)), np.zeros((8, 8)))]
        history = seg.train_segmenter(net, pairs, epochs=0)
        assert history == []
        for p, b in zip(net.params(), before):
            np.testing.assert_array_equal(p.value, b)

    def test_fits_trivial_all_zero_mask(self):
        net = small_net(5, dtype=np.float32)
        pairs = [(np.zeros((8, 8, 3)), np.zeros((8, 8)))]
        seg.train_segmenter(net, pairs, epochs=50, lr=0.1, seed=0)
        assert seg.predict_mask(net, pairs[0][0]).mean() < 0.1

    def test_training_is_deterministic(self):
        pairs = make_ellipse_pairs(6, size=16, seed=0)
        outs = []
        for _ in range(2):
            net = small_net(6, dtype=np.float32)
            seg.train_segmenter(net, pairs, epochs=5, lr=0.01, seed=1)
            outs.append(np.concatenate([p.value.reshape(-1) for p in net.params()]))
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_loss_trends_down_on_ellipses(self):
        net = small_net(7, dtype=np.float32)
        pairs = make_ellipse_pairs(10, size=16, seed=1)
        history = seg.train_segmenter(net, pairs, epochs=30, lr=0.01, seed=0)
        assert np.mean(history[-5:]) < np.mean(history[:5])

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            seg.train_segmenter(small_net(), [], epochs=1)


class TestMasks:
    def test_binarize_ties_go_to_one(self):
        out = seg.binarize_mask(np.array([0.49, 0.5, 0.51]))
        np.testing.assert_array_equal(out, [0.0, 1.0, 1.0])

    def test_dice_perfect_and_disjoint(self):
        a = np.zeros((4, 4))
        a[:2] = 1.0
        assert seg.dice_coefficient(a, a) == 1.0
        assert seg.dice_coefficient(a, 1.0 - a) == 0.0

    def test_apply_mask_all_ones_is_identity(self):
        img = rng_for(0, "mask").random((8, 8, 3))
        np.testing.assert_array_equal(seg.apply_mask(img, np.ones((8, 8))), img)

    def test_apply_mask_all_zeros_black(self):
        img = rng_for(1, "mask").random((8, 8, 3))
        np.testing.assert_array_equal(seg.apply_mask(img, np.zeros((8, 8))),
                                      np.zeros_like(img))

    def test_half_mask_zeroes_background_only(self):
        img = rng_for(2, "mask").random((8, 8, 3))
        mask = np.zeros((8, 8))
        mask[:, 4:] = 1.0
        out = seg.apply_mask(img, mask)
        np.testing.assert_array_equal(out[:, :4], 0.0)
        np.testing.assert_array_equal(out[:, 4:], img[:, 4:])

    def test_multiply_idempotent_for_binary_masks(self):
        img = rng_for(3, "mask").random((8, 8, 3))
        mask = (rng_for(4, "mask").random((8, 8)) > 0.5).astype(float)
        once = seg.apply_mask(img, mask)
        np.testing.assert_array_equal(seg.apply_mask(once, mask), once)

    def test_crop_mode_resizes_back(self):
        img = rng_for(5, "mask").random((32, 32, 3))
        mask = np.zeros((32, 32))
        mask[10:20, 12:22] = 1.0
        out = seg.apply_mask(img, mask, mode="crop")
        assert out.shape == img.shape

    def test_crop_empty_mask_falls_back_with_warning(self):
        img = rng_for(6, "mask").random((16, 16, 3))
        with pytest.warns(UserWarning, match="empty binary mask"):
            out = seg.apply_mask(img, np.zeros((16, 16)), mode="crop")
        np.testing.assert_array_equal(out, np.zeros_like(img))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mask dims"):
            seg.apply_mask(np.zeros((8, 8, 3)), np.zeros((4, 4)))


class TestToyEllipseExperiment:
    def test_short_training_reaches_reasonable_dice(self):
        """Fast sanity version of the full toy run (acceptance covers 200 epochs)."""
        pairs = make_ellipse_pairs(24, size=16, seed=2)
        train, held = pairs[:20], pairs[20:]
        net = small_net(8, dtype=np.float32)
        seg.train_segmenter(net, train, epochs=60, lr=0.01, batch_size=8, seed=0)
        dices = [seg.dice_coefficient(seg.predict_mask(net, img), gt)
                 for img, gt in held]
        assert np.mean(dices) > 0.75
