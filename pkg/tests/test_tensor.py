"""Tensor engine tests: forward oracles and gradient checks."""

import numpy as np
import pytest

from wavesig.tensor import (
    Tensor,
    Tape,
    backward,
    conv2d,
    dense,
    grad_check,
    l2_normalize,
    maxpool2d,
    relu,
)


def naive_conv2d(x, w, b, stride=1, padding=0):
    """Direct quadruple-loop cross-correlation, the independent oracle."""
    c, h, ww = x.shape
    f, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    hp, wp = h + 2 * padding, ww + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((f, oh, ow), dtype=np.float64)
    for fi in range(f):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for ci in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            acc += x[ci, y * stride + i, xx * stride + j] * w[fi, ci, i, j]
                out[fi, y, xx] = acc + b[fi]
    return out


def naive_maxpool(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow), dtype=x.dtype)
    for ci in range(c):
        for y in range(oh):
            for xx in range(ow):
                out[ci, y, xx] = x[ci, y * stride : y * stride + window, xx * stride : xx * stride + window].max()
    return out


class TestConv2d:
    def test_identity_kernel_selects_channel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(3, 5, 6)))
        w = np.zeros((1, 3, 1, 1))
        w[0, 1, 0, 0] = 1.0
        out = conv2d(x, Tensor(w), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data[0], x.data[1])

    def test_constant_field(self):
        c, val = 4, 2.5
        x = Tensor(np.full((c, 6, 7), val))
        w = Tensor(np.ones((2, c, 3, 3)))
        out = conv2d(x, w, Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, 9 * val * c)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 7, 7))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b), atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (1, 1), (2, 2), (3, 1)])
    def test_matches_naive_with_stride_padding(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(2, 9, 11))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, padding), atol=1e-12)

    def test_output_extent_formula(self):
        x = Tensor(np.zeros((1, 10, 13)))
        out = conv2d(x, Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)), stride=2, padding=1)
        assert out.shape == (1, (10 + 2 - 3) // 2 + 1, (13 + 2 - 3) // 2 + 1)

    def test_shape_errors(self):
        x = Tensor(np.zeros((2, 5, 5)))
        with pytest.raises(ValueError, match="channel mismatch"):
            conv2d(x, Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))
        with pytest.raises(ValueError, match="larger than padded input"):
            conv2d(x, Tensor(np.zeros((1, 2, 7, 7))), Tensor(np.zeros(1)))
        with pytest.raises(ValueError, match="bias"):
            conv2d(x, Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.zeros(3)))
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 0, 5)))

    def test_translation_equivariance_valid_interior(self):
        # stride 1, zero padding: shifting the input shifts the output.
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 12, 12))
        w = Tensor(rng.normal(size=(2, 1, 3, 3)))
        b = Tensor(np.zeros(2))
        dy, dx = 2, 3
        shifted = np.roll(np.roll(x, dy, axis=1), dx, axis=2)
        out = conv2d(Tensor(x), w, b).data
        out_shifted = conv2d(Tensor(shifted), w, b).data
        # compare interiors untouched by wrap-around
        np.testing.assert_allclose(
            out_shifted[:, dy + 1 : -1, dx + 1 : -1],
            out[:, 1 : -1 - dy, 1 : -1 - dx],
            atol=1e-12,
        )


class TestRelu:
    def test_basic(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        out = relu(Tensor(-np.abs(np.random.default_rng(1).normal(size=(3, 4)))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_scalar_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 5))
        expected = np.array([[max(v, 0.0) for v in row] for row in x])
        np.testing.assert_array_equal(relu(Tensor(x)).data, expected)


class TestMaxpool2d:
    def test_two_by_two(self):
        out = maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), window=2, stride=2)
        np.testing.assert_array_equal(out.data, [[[4.0]]])

    def test_constant_image(self):
        out = maxpool2d(Tensor(np.full((2, 6, 8), 3.3)), window=2, stride=2)
        assert out.shape == (2, 3, 4)
        np.testing.assert_allclose(out.data, 3.3)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 6, 8))
        out = maxpool2d(Tensor(x), window=2, stride=2)
        np.testing.assert_array_equal(out.data, naive_maxpool(x, 2, 2))

    def test_ceil_mode_keeps_partial_windows(self):
        x = np.arange(11 * 18, dtype=np.float64).reshape(1, 11, 18)
        out = maxpool2d(Tensor(x), window=2, stride=2, ceil_mode=True)
        assert out.shape == (1, 6, 9)
        # bottom row windows cover a single input row
        np.testing.assert_array_equal(out.data[0, 5], x[0, 10, 1::2])

    def test_window_too_large(self):
        with pytest.raises(ValueError, match="larger than input"):
            maxpool2d(Tensor(np.zeros((1, 3, 3))), window=4, stride=1)

    def test_tie_routes_to_first_occurrence(self):
        x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        out = maxpool2d(x, window=2, stride=2)
        backward(out.sum())
        expected = np.zeros((1, 2, 2))
        expected[0, 0, 0] = 1.0
        np.testing.assert_array_equal(x.grad, expected)


class TestDense:
    def test_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        out = dense(Tensor(v), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, v)

    def test_zero_weight_returns_bias(self):
        b = np.array([0.5, -1.5])
        out = dense(Tensor(np.ones(4)), Tensor(np.zeros((2, 4))), Tensor(b))
        np.testing.assert_array_equal(out.data, b)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=4)
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        expected = np.array([sum(w[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)])
        out = dense(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="incompatible"):
            dense(Tensor(np.zeros(4)), Tensor(np.zeros((3, 5))), Tensor(np.zeros(3)))


class TestL2Normalize:
    def test_three_four(self):
        out = l2_normalize(Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-12)

    def test_zero_vector_guard(self):
        out = l2_normalize(Tensor(np.zeros(5)), epsilon=1e-12)
        np.testing.assert_array_equal(out.data, np.zeros(5))
        assert np.all(np.isfinite(out.data))

    def test_unit_norm(self):
        rng = np.random.default_rng(9)
        out = l2_normalize(Tensor(rng.normal(size=128)))
        assert abs(np.linalg.norm(out.data) - 1.0) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_zero_times_function_gives_zero_grads(self):
        x = Tensor(np.random.default_rng(1).normal(size=6), requires_grad=True)
        loss = relu(x).sum() * 0.0
        backward(loss)
        np.testing.assert_array_equal(x.grad, np.zeros(6))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)

    def test_reset_by_default_accumulate_on_flag(self):
        x = Tensor(np.ones(3), requires_grad=True)
        backward(x.sum())
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones(3))
        backward(x.sum(), accumulate=True)
        np.testing.assert_array_equal(x.grad, 2 * np.ones(3))

    def test_tape_visits_each_node_once(self):
        x = Tensor(np.ones(4), requires_grad=True)
        y = x * 2.0
        loss = (y + y).sum()  # diamond: y consumed twice
        tape = Tape(loss)
        assert len({id(n) for n in tape.nodes}) == len(tape.nodes)
        backward(loss)
        np.testing.assert_array_equal(x.grad, 4 * np.ones(4))

    def test_composite_graph_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        w_conv = Tensor(rng.normal(size=(2, 1, 3, 3)) * 0.5, requires_grad=True)
        b_conv = Tensor(np.zeros(2), requires_grad=True)
        w_fc = Tensor(rng.normal(size=(3, 2 * 4 * 4)) * 0.5, requires_grad=True)
        b_fc = Tensor(np.zeros(3), requires_grad=True)

        def net(img: Tensor) -> Tensor:
            h = relu(conv2d(img, w_conv, b_conv, stride=1, padding=0))
            h = maxpool2d(h, window=2, stride=2)
            h = h.reshape((2 * 4 * 4,))
            return dense(h, w_fc, b_fc).square().sum()

        x0 = Tensor(rng.normal(size=(1, 10, 10)))
        err = grad_check(net, x0, step=1e-4)
        assert err < 1e-6

        # parameter gradients against finite differences as well
        loss = net(x0)
        backward(loss)
        analytic = w_conv.grad.copy()
        step = 1e-5
        for idx in [(0, 0, 0, 0), (1, 0, 2, 1), (0, 0, 1, 2)]:
            orig = w_conv.data[idx]
            w_conv.data[idx] = orig + step
            hi = net(x0).item()
            w_conv.data[idx] = orig - step
            lo = net(x0).item()
            w_conv.data[idx] = orig
            fd = (hi - lo) / (2 * step)
            assert abs(analytic[idx] - fd) / max(1.0, abs(analytic[idx])) < 1e-4


class TestGradCheck:
    def test_dense_layer(self):
        rng = np.random.default_rng(8)
        w = Tensor(rng.normal(size=(3, 5)))
        b = Tensor(rng.normal(size=3))
        err = grad_check(lambda x: dense(x, w, b).square().sum(), Tensor(rng.normal(size=5)), step=1e-4)
        assert err < 1e-6

    def test_relu_away_from_zero(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=10)
        x[np.abs(x) < 0.05] = 0.5  # keep every input well clear of the kink
        err = grad_check(lambda t: relu(t).sum(), Tensor(x), step=1e-4)
        assert err < 1e-6

    def test_linear_map_exact(self):
        rng = np.random.default_rng(21)
        err = grad_check(lambda t: (t * 3.0).sum(), Tensor(rng.normal(size=7)), step=1e-4)
        assert err < 1e-10

    def test_maxpool_away_from_ties(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(1, 4, 4)) * 10  # generic values: no ties, gaps >> step
        err = grad_check(lambda t: maxpool2d(t, 2, 2).sum(), Tensor(x), step=1e-4)
        assert err < 1e-6

    def test_l2_normalize(self):
        rng = np.random.default_rng(19)
        v = Tensor(rng.normal(size=6) + 2.0)
        err = grad_check(lambda t: (l2_normalize(t) * Tensor(np.arange(6.0))).sum(), v, step=1e-4)
        assert err < 1e-6


class TestInvariants:
    def test_reshape_round_trip(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 4, 5)))
        back = x.reshape((60,)).reshape((3, 4, 5))
        np.testing.assert_array_equal(back.data, x.data)

    def test_ops_stay_finite(self):
        rng = np.random.default_rng(31)
        x = Tensor(rng.normal(size=(2, 8, 8)).astype(np.float32), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32), requires_grad=True)
        b = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        h = maxpool2d(relu(conv2d(x, w, b, padding=1)), 2, 2)
        emb = l2_normalize(h.reshape((3 * 4 * 4,)))
        loss = emb.square().sum().sqrt()
        backward(loss)
        for t in (h, emb, loss):
            assert np.all(np.isfinite(t.data))
        for t in (x, w, b):
            assert np.all(np.isfinite(t.grad))

    def test_sqrt_at_zero_with_masked_upstream_stays_finite(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        d = x.square().sum().sqrt()
        loss = relu(d - 1.0)  # loss floor active: upstream gradient is zero
        backward(loss)
        assert np.all(np.isfinite(x.grad))
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_float32_storage_preserved(self):
        x = Tensor(np.ones((2, 3), dtype=np.float32))
        assert relu(x).dtype == np.float32
        assert x.sum().dtype == np.float32
