"""Core operator tests: brute-force oracles, losses, Adam, serialization.

The oracles here are deliberately naive nested-loop implementations computed
independently of the vectorized forward paths they check.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionforge import nn
from lesionforge.util import rng_for

F64 = np.float64


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def conv2d_oracle(x, w, b, stride, pad):
    """Six nested loops over batch, out-channel, spatial, in-channel, kernel."""
    n, c, h, wid = x.shape
    o, _, k, _ = w.shape
    if pad == "same":
        oh, ow = -(-h // stride), -(-wid // stride)
        ph = max((oh - 1) * stride + k - h, 0)
        pw = max((ow - 1) * stride + k - wid, 0)
        p0, q0 = ph // 2, pw // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p0, ph - p0), (q0, pw - q0)))
    else:
        xp = x
    n, c, hp, wp = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = b[oi]
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[ni, ci, i * stride + ki, j * stride + kj] \
                                    * w[oi, ci, ki, kj]
                    out[ni, oi, i, j] = acc
    return out


def depthwise_oracle(x, w, b, stride, pad):
    n, c, h, wid = x.shape
    _, k, _ = w.shape
    big = np.zeros((c, c, k, k))
    for ci in range(c):
        big[ci, ci] = w[ci]
    return conv2d_oracle(x, big, b, stride, pad)


def dense_oracle(x, w, b):
    n, f = x.shape
    _, k = w.shape
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            acc = b[j]
            for q in range(f):
                acc += x[i, q] * w[q, j]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# forward-path oracle equivalence
# ---------------------------------------------------------------------------

class TestConvOracles:
    """Vectorized convolutions must match the nested-loop references."""

    @pytest.mark.parametrize("seed", range(20))
    def test_conv2d_matches_oracle(self, seed):
        rng = rng_for(seed, "conv-oracle")
        stride = int(rng.integers(1, 3))
        pad = ["same", "valid"][seed % 2]
        x = rng.standard_normal((2, 2, 8, 8))
        layer = nn.Conv2d(2, 3, 3, stride=stride, pad=pad, seed=seed, dtype=F64)
        got = layer.forward(x)
        want = conv2d_oracle(x, layer.w.value, layer.b.value, stride, pad)
        np.testing.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_depthwise_matches_oracle(self, seed):
        rng = rng_for(seed, "dw-oracle")
        stride = int(rng.integers(1, 3))
        x = rng.standard_normal((2, 3, 4, 4))
        layer = nn.DepthwiseConv2d(3, 3, stride=stride, pad="same", seed=seed, dtype=F64)
        got = layer.forward(x)
        want = depthwise_oracle(x, layer.w.value, layer.b.value, stride, "same")
        np.testing.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_dense_matches_oracle(self, seed):
        rng = rng_for(seed, "dense-oracle")
        x = rng.standard_normal((4, 6))
        layer = nn.Dense(6, 5, seed=seed, dtype=F64)
        got = layer.forward(x)
        want = dense_oracle(x, layer.w.value, layer.b.value)
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_conv_sum_kernel_on_ones(self):
        x = np.ones((1, 1, 3, 3))
        layer = nn.Conv2d(1, 1, 3, pad="valid", dtype=F64)
        layer.w.value[...] = 1.0
        layer.b.value[...] = 0.0
        assert layer.forward(x).reshape(()) == pytest.approx(9.0)

    def test_identity_1x1_kernel(self):
        rng = rng_for(0, "identity-conv")
        x = rng.standard_normal((1, 1, 5, 5))
        layer = nn.Conv2d(1, 1, 1, pad="valid", dtype=F64)
        layer.w.value[...] = 1.0
        layer.b.value[...] = 0.0
        np.testing.assert_allclose(layer.forward(x), x)

    def test_depthwise_identity_kernels_preserve_input(self):
        rng = rng_for(0, "identity-dw")
        x = rng.standard_normal((1, 2, 4, 4))
        layer = nn.DepthwiseConv2d(2, 3, pad="same", dtype=F64)
        layer.w.value[...] = 0.0
        layer.w.value[:, 1, 1] = 1.0
        layer.b.value[...] = 0.0
        np.testing.assert_allclose(layer.forward(x), x)

    def test_depthwise_preserves_channel_count(self):
        x = rng_for(1, "dw-ch").standard_normal((2, 5, 6, 6))
        layer = nn.DepthwiseConv2d(5, 3, dtype=F64)
        assert layer.forward(x).shape[1] == 5

    def test_conv_shape_mismatch_raises(self):
        layer = nn.Conv2d(3, 4, 3, dtype=F64)
        with pytest.raises(ValueError, match="expected"):
            layer.forward(np.zeros((1, 2, 8, 8)))


class TestPoolingAndActivations:
    def test_relu(self):
        out = nn.ReLU().forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])

    def test_max_pool_basic(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        assert nn.MaxPool2d(2).forward(x).reshape(()) == 4.0

    def test_max_pool_window_too_large(self):
        with pytest.raises(ValueError, match="larger than input"):
            nn.MaxPool2d(4).forward(np.zeros((1, 1, 2, 2)))

    def test_max_pool_gradient_routes_to_argmax(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        pool = nn.MaxPool2d(2)
        pool.forward(x)
        dx = pool.backward(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(dx.reshape(2, 2), [[0, 0], [0, 1]])

    def test_global_avg_pool(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert nn.GlobalAvgPool().forward(x).reshape(()) == pytest.approx(2.5)

    def test_global_avg_pool_1x1_identity(self):
        x = rng_for(0, "gap1").standard_normal((2, 3, 1, 1))
        np.testing.assert_allclose(nn.GlobalAvgPool().forward(x), x[:, :, 0, 0])

    def test_gap_backward_distributes_uniformly(self):
        gap = nn.GlobalAvgPool()
        gap.forward(np.zeros((1, 1, 2, 2)))
        dx = gap.backward(np.array([[4.0]]))
        np.testing.assert_allclose(dx, np.full((1, 1, 2, 2), 1.0))


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(nn.softmax(np.zeros((1, 3))), np.full((1, 3), 1 / 3))

    def test_no_overflow_on_large_logits(self):
        p = nn.softmax(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p[0, 0], 1.0)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
           st.floats(-100, 100))
    def test_shift_invariance(self, logits, shift):
        row = np.array([logits])
        np.testing.assert_allclose(nn.softmax(row), nn.softmax(row + shift), atol=1e-9)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 6), st.integers(1, 5))
    @settings(max_examples=60)
    def test_rows_sum_to_one_and_positive(self, seed, k, n):
        x = rng_for(seed, "softmax-prop").standard_normal((n, k)) * 10
        p = nn.softmax(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(p > 0)


class TestLosses:
    def test_perfect_prediction_zero_loss(self):
        probs = np.array([[1.0, 0.0]])
        loss, _ = nn.weighted_cross_entropy(probs, [0], [1.0, 1.0])
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_weighted_example(self):
        """w=2 on the true class doubles -log(0.5)."""
        loss, _ = nn.weighted_cross_entropy(np.array([[0.5, 0.5]]), [1], [1.0, 2.0])
        assert loss == pytest.approx(2 * np.log(2), rel=1e-12)

    def test_uniform_weights_equal_plain_ce(self):
        rng = rng_for(3, "ce")
        raw = rng.uniform(0.1, 1.0, size=(5, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, size=5)
        a, _ = nn.weighted_cross_entropy(probs, labels, np.ones(4))
        b, _ = nn.weighted_cross_entropy(probs, labels, None)
        assert a == pytest.approx(b, abs=1e-12)

    def test_invalid_label_raises(self):
        with pytest.raises(ValueError, match="labels"):
            nn.weighted_cross_entropy(np.array([[0.5, 0.5]]), [2], None)

    def test_loss_nonnegative(self):
        rng = rng_for(9, "ce-nonneg")
        raw = rng.uniform(0.01, 1.0, size=(8, 3))
        probs = raw / raw.sum(axis=1, keepdims=True)
        loss, _ = nn.weighted_cross_entropy(probs, rng.integers(0, 3, size=8), None)
        assert loss >= 0.0

    def test_dice_zero_on_exact_match(self):
        gt = (rng_for(0, "dice").random((4, 4)) > 0.5).astype(float)
        loss, _ = nn.dice_bce_loss(gt, gt, bce_weight=0.0)
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_dice_disjoint_half_mask(self):
        """pred = 1-gt with |gt| = N/2 leaves overlap 0: term = 1 - s/(N+s)."""
        n = 64
        gt = np.zeros(n)
        gt[: n // 2] = 1.0
        pred = 1.0 - gt
        smooth = 1.0
        loss, _ = nn.dice_bce_loss(pred, gt, smooth=smooth, bce_weight=0.0)
        assert loss == pytest.approx(1.0 - smooth / (n + smooth), rel=1e-9)

    def test_dice_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            nn.dice_bce_loss(np.zeros((2, 2)), np.zeros((3, 3)))


class TestAdam:
    def test_first_step_magnitude(self):
        """Bias correction makes m_hat = v_hat = 1, so the step is ~lr."""
        p = nn.Parameter("p", np.zeros(1, dtype=np.float64))
        p.grad = np.ones(1)
        state = nn.AdamState.like(p)
        nn.adam_step(p, state, lr=0.001)
        assert p.value[0] == pytest.approx(-0.000999999, abs=1e-8)

    def test_zero_gradient_is_identity(self):
        p = nn.Parameter("p", np.full(3, 1.5))
        state = nn.AdamState.like(p)
        for _ in range(10):
            nn.adam_step(p, state)
        np.testing.assert_array_equal(p.value, np.full(3, 1.5))

    def test_frozen_parameter_rejected_and_skipped(self):
        p = nn.Parameter("p", np.ones(2), frozen=True)
        p.grad = np.ones(2)
        with pytest.raises(ValueError, match="frozen"):
            nn.adam_step(p, nn.AdamState.like(p))
        opt = nn.Adam([p])
        before = p.value.copy()
        for _ in range(5):
            opt.step()
        np.testing.assert_array_equal(p.value, before)

    def test_nonfinite_gradient_aborts(self):
        p = nn.Parameter("p", np.ones(2))
        p.grad = np.array([np.nan, 1.0])
        with pytest.raises(FloatingPointError, match="non-finite"):
            nn.adam_step(p, nn.AdamState.like(p))


class TestGradCheck:
    def test_dense_layer_tight(self):
        layer = nn.Dense(5, 3, seed=0, dtype=F64)
        x = rng_for(0, "gc-dense").standard_normal((2, 5))
        r = rng_for(1, "gc-dense").standard_normal((2, 3))

        def loss_fn():
            return float((layer.forward(x) * r).sum())

        for p in layer.params():
            p.zero_grad()
        layer.forward(x)
        dx = layer.backward(r)
        rep = nn.grad_check("dense", loss_fn, {"x": x, "w": layer.w.value},
                            {"x": dx, "w": layer.w.grad}, tolerance=1e-6)
        assert rep.passed, rep.per_tensor

    def test_corrupted_gradient_detected(self):
        layer = nn.Dense(4, 2, seed=1, dtype=F64)
        x = rng_for(2, "gc-bad").standard_normal((3, 4))
        r = rng_for(3, "gc-bad").standard_normal((3, 2))

        def loss_fn():
            return float((layer.forward(x) * r).sum())

        layer.forward(x)
        dx = layer.backward(r) * 1.5  # deliberately wrong
        rep = nn.grad_check("bad", loss_fn, {"x": x}, {"x": dx}, tolerance=1e-4)
        assert not rep.passed

    def test_requires_float64(self):
        x = np.zeros(3, dtype=np.float32)
        with pytest.raises(ValueError, match="float64"):
            nn.grad_check("f32", lambda: 0.0, {"x": x}, {"x": x}, 1e-4)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = rng_for(0, "ser")
        params = [nn.Parameter("a.w", rng.standard_normal((3, 4)).astype(np.float32)),
                  nn.Parameter("b.b", rng.standard_normal(7).astype(np.float32))]
        path = tmp_path / "params.lfw"
        nn.save_parameters(path, params)
        table = nn.load_parameters(path)
        assert set(table) == {"a.w", "b.b"}
        for p in params:
            np.testing.assert_array_equal(table[p.name], p.value)
        # file must round-trip byte for byte
        nn.save_parameters(tmp_path / "again.lfw",
                           [nn.Parameter(k, v) for k, v in table.items()])
        assert (tmp_path / "params.lfw").read_bytes() == (tmp_path / "again.lfw").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.lfw"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="bad magic"):
            nn.load_parameters(path)

    def test_load_into_validates_shapes(self, tmp_path):
        p = nn.Parameter("w", np.zeros((2, 2), dtype=np.float32))
        nn.save_parameters(tmp_path / "p.lfw", [p])
        other = nn.Parameter("w", np.zeros((3, 3), dtype=np.float32))
        with pytest.raises(ValueError, match="shape"):
            nn.load_into([other], tmp_path / "p.lfw")

    def test_missing_tensor_rejected(self, tmp_path):
        nn.save_parameters(tmp_path / "p.lfw", [nn.Parameter("w", np.zeros(2, dtype=np.float32))])
        with pytest.raises(KeyError, match="missing"):
            nn.load_into([nn.Parameter("other", np.zeros(2, dtype=np.float32))],
                         tmp_path / "p.lfw")
