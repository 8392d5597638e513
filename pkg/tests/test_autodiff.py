"""Unit tests for the reverse-mode differentiation core.

Gradients are validated against central finite differences and, for the
convolution family, against naive sliding-window reference implementations.
"""

import numpy as np
import pytest

import emagan.autodiff as ad
from emagan.autodiff import ContractViolation, Tensor, no_grad

RNG = np.random.default_rng(1234)
H = 1e-6


def numeric_grad(value_fn, arr):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + H
        fp = value_fn()
        arr[idx] = orig - H
        fm = value_fn()
        arr[idx] = orig
        g[idx] = (fp - fm) / (2 * H)
    return g


def check_grads(build_loss, tensors, tol=1e-6):
    loss = build_loss()
    gmap = ad.backward(loss)
    for t in tensors:
        analytic = gmap[t].data if t in gmap else np.zeros_like(t.data)
        numeric = numeric_grad(lambda: build_loss().item(), t.data)
        err = np.abs(analytic - numeric)
        scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        assert (err / scale).max() < tol, (err / scale).max()


def proj_loss(out, seed=0):
    return ad.sum_all(ad.mul(out, Tensor(np.random.default_rng(seed).normal(size=out.data.shape))))


# ---------------------------------------------------------------------------
# Tensor basics and recording
# ---------------------------------------------------------------------------


class TestTensor:
    def test_data_is_float64(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float64

    def test_requires_grad_propagates(self):
        a = Tensor([1.0], requires_grad=True)
        b = Tensor([2.0])
        out = ad.add(a, b)
        assert out.requires_grad
        out2 = ad.add(b, b)
        assert not out2.requires_grad

    def test_no_grad_blocks_recording(self):
        a = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = ad.mul(a, a)
        assert not out.requires_grad

    def test_detach_shares_storage(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        d = a.detach()
        assert not d.requires_grad
        assert d.data is a.data

    def test_operator_sugar(self):
        a = Tensor([2.0], requires_grad=True)
        b = Tensor([3.0])
        assert (a + b).item() == 5.0
        assert (a - b).item() == -1.0
        assert (a * b).item() == 6.0
        assert (a * 2.0).item() == 4.0
        assert (a + 1.0).item() == 3.0

    def test_item_requires_scalar(self):
        with pytest.raises(ContractViolation):
            Tensor([1.0, 2.0]).item()


# ---------------------------------------------------------------------------
# Backward mechanics
# ---------------------------------------------------------------------------


class TestBackward:
    def test_fan_out_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        loss = ad.sum_all(ad.add(ad.mul(x, x), ad.scale(x, 2.0)))
        g = ad.backward(loss)[x].data
        assert np.allclose(g, 2 * 3.0 + 2.0)

    def test_constants_absent_from_grad_map(self):
        x = Tensor([1.0], requires_grad=True)
        c = Tensor([5.0])
        gmap = ad.backward(ad.sum_all(ad.mul(x, c)))
        assert x in gmap and c not in gmap

    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractViolation):
            ad.backward(ad.mul(x, x))

    def test_grad_of_unconnected_leaf_is_zeros(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0], requires_grad=True)
        loss = ad.sum_all(ad.mul(x, x))
        node = ad.grad_as_node(loss, y)
        assert np.array_equal(node.data, np.zeros(1))

    def test_grad_as_node_requires_grad_leaf(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0])
        loss = ad.sum_all(x)
        with pytest.raises(ContractViolation):
            ad.grad_as_node(loss, y)

    def test_double_backprop_analytic(self):
        # d/dw of (|w| - 1)^2 with |w| = 5 is 2*(|w|-1)*w/|w|
        w = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        loss = ad.sum_all(ad.mul(w, w))  # |w|^2, d/dw = 2w
        g = ad.grad_as_node(loss, w)  # 2w as a graph node
        norm = ad.sqrt(ad.sum_all(ad.mul(ad.scale(g, 0.5), ad.scale(g, 0.5))))
        dev = ad.shift(norm, -1.0)
        penalty = ad.mul(dev, dev)
        assert abs(penalty.item() - 16.0) < 1e-12
        grads = ad.backward(penalty)[w].data
        expected = 2 * (5 - 1) * np.array([3.0, 4.0]) / 5
        assert np.allclose(grads, expected, atol=1e-12)

    def test_deep_chain_no_recursion_limit(self):
        x = Tensor([1.0], requires_grad=True)
        out = x
        for _ in range(5000):
            out = ad.scale(out, 1.0)
        g = ad.backward(ad.sum_all(out))[x].data
        assert g[0] == 1.0


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


class TestElementwise:
    def test_arith_grads(self):
        x = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
        y = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
        check_grads(
            lambda: proj_loss(ad.add(ad.mul(x, y), ad.sub(x, ad.scale(y, 0.3)))),
            [x, y],
        )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            ad.add(Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_tanh_value_and_grad(self):
        x = Tensor(np.array([0.0, 1.0, -2.0]), requires_grad=True)
        out = ad.tanh(x)
        assert np.allclose(out.data, np.tanh(x.data))
        check_grads(lambda: proj_loss(ad.tanh(x)), [x])

    def test_smooth_unary_grads(self):
        x = Tensor(RNG.uniform(0.5, 1.5, (2, 3)), requires_grad=True)

        def build():
            out = ad.add(ad.exp(x), ad.add(ad.sin(x), ad.cos(x)))
            return proj_loss(ad.add(out, ad.add(ad.sqrt(x), ad.reciprocal(x))))

        check_grads(build, [x])

    def test_sigmoid_matches_closed_form(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]))
        assert np.allclose(ad.sigmoid(x).data, 1 / (1 + np.exp(-x.data)))

    def test_leaky_relu_values(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]))
        out = ad.leaky_relu(x, 0.2)
        assert np.allclose(out.data, [-0.4, 0.0, 3.0])

    def test_leaky_relu_slope_at_zero_is_alpha(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        g = ad.backward(ad.sum_all(ad.leaky_relu(x, 0.25)))[x].data
        assert g[0] == 0.25

    def test_relu_grad_at_zero_is_zero(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        g = ad.backward(ad.sum_all(ad.relu(x)))[x].data
        assert g[0] == 0.0

    def test_clamp_boundary_grad_is_zero(self):
        x = Tensor(np.array([-1.0, -0.5, 0.0, 0.5, 1.0]), requires_grad=True)
        g = ad.backward(ad.sum_all(ad.clamp(x, -0.5, 0.5)))[x].data
        assert np.array_equal(g, [0.0, 0.0, 1.0, 0.0, 0.0])

    def test_clamp_values(self):
        x = Tensor(np.array([-2.0, 0.3, 2.0]))
        assert np.allclose(ad.clamp(x, -1.0, 1.0).data, [-1.0, 0.3, 1.0])


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


class TestShapeOps:
    def test_reshape_transpose_grads(self):
        x = Tensor(RNG.normal(size=(2, 6)), requires_grad=True)

        def build():
            return proj_loss(ad.transpose2d(ad.reshape(x, (4, 3))))

        check_grads(build, [x])

    def test_pad_slice_flip_grads(self):
        x = Tensor(RNG.normal(size=(2, 3, 5)), requires_grad=True)

        def build():
            out = ad.slice_last(ad.pad_last(ad.flip_last(x), 2, 1), 1, 7)
            return proj_loss(out)

        check_grads(build, [x])

    def test_expand_sum_roundtrip(self):
        x = Tensor(RNG.normal(size=(2, 3)), requires_grad=True)
        e = ad.expand(x, 2, 5)
        assert e.data.shape == (2, 3, 5)
        s = ad.sum_axis(e, 2)
        assert np.allclose(s.data, 5 * x.data)
        check_grads(lambda: proj_loss(ad.sum_axis(ad.expand(x, 0, 4), 0)), [x])

    def test_gather_scatter_adjoint(self):
        idx = np.array([0, 2, 2, 1])
        x = np.random.default_rng(5).normal(size=(2, 3, 4))
        y = np.random.default_rng(6).normal(size=(2, 3, 4))
        lhs = (ad.gather_last(Tensor(x), idx).data * y).sum()
        rhs = (x * ad.scatter_add_last(Tensor(y), idx, 4).data).sum()
        assert abs(lhs - rhs) < 1e-12

    def test_channel_ops(self):
        x = Tensor(RNG.normal(size=(2, 4, 6)), requires_grad=True)
        c = ad.channel(x, 2)
        assert c.data.shape == (2, 6)
        assert np.array_equal(c.data, x.data[:, 2])
        emb = ad.channel_embed(c, 1, 3)
        assert emb.data.shape == (2, 3, 6)
        assert np.array_equal(emb.data[:, 1], c.data)
        assert np.array_equal(emb.data[:, 0], np.zeros((2, 6)))
        check_grads(lambda: proj_loss(ad.channel_embed(ad.channel(x, 0), 2, 4)), [x])


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


class TestLinalg:
    def test_dense_example(self):
        x = Tensor([[1.0, 2.0]])
        w = Tensor([[1.0], [1.0]])
        b = Tensor([3.0])
        assert ad.dense(x, w, b).data.tolist() == [[6.0]]

    def test_dense_grads(self):
        x = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(RNG.normal(size=(4, 2)), requires_grad=True)
        b = Tensor(RNG.normal(size=(2,)), requires_grad=True)
        check_grads(lambda: proj_loss(ad.dense(x, w, b)), [x, w, b])

    def test_matmul_shape_check(self):
        with pytest.raises(ContractViolation):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_channel_bias_add_grads(self):
        x = Tensor(RNG.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(RNG.normal(size=(3,)), requires_grad=True)
        check_grads(lambda: proj_loss(ad.channel_bias_add(x, b)), [x, b])


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def naive_conv1d(x, k, stride):
    B, C, L = x.shape
    F, _, K = k.shape
    lout = (L - K) // stride + 1
    out = np.zeros((B, F, lout))
    for b in range(B):
        for f in range(F):
            for o in range(lout):
                s = o * stride
                out[b, f, o] = (x[b, :, s : s + K] * k[f]).sum()
    return out


def naive_conv1d_transpose_raw(x, k, stride):
    B, C, L = x.shape
    _, F, K = k.shape
    out = np.zeros((B, F, (L - 1) * stride + K))
    for b in range(B):
        for c in range(C):
            for i in range(L):
                out[b, :, i * stride : i * stride + K] += x[b, c, i] * k[c]
    return out


class TestConv:
    def test_conv1d_examples(self):
        x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
        k = Tensor(np.array([[[1.0, 1.0]]]))
        assert ad.conv1d(x, k, 1).data.tolist() == [[[3.0, 5.0]]]
        x2 = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        assert ad.conv1d(x2, k, 2).data.tolist() == [[[3.0, 7.0]]]

    def test_conv1d_transpose_raw_example(self):
        x = Tensor(np.array([[[1.0, 2.0]]]))
        k = Tensor(np.array([[[1.0, 1.0]]]))
        assert ad.conv1d_transpose_raw(x, k, 2).data.tolist() == [[[1.0, 1.0, 2.0, 2.0]]]

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_conv1d_matches_naive(self, stride):
        rng = np.random.default_rng(stride)
        x = rng.normal(size=(2, 3, 14))
        k = rng.normal(size=(4, 3, 5))
        got = ad.conv1d(Tensor(x), Tensor(k), stride).data
        assert np.allclose(got, naive_conv1d(x, k, stride), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_transpose_raw_matches_naive(self, stride):
        rng = np.random.default_rng(10 + stride)
        x = rng.normal(size=(2, 3, 6))
        k = rng.normal(size=(3, 4, 5))
        got = ad.conv1d_transpose_raw(Tensor(x), Tensor(k), stride).data
        assert np.allclose(got, naive_conv1d_transpose_raw(x, k, stride), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2, 4])
    def test_symmetric_trim_length(self, stride):
        L, K = 8, 25
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, L)))
        k = Tensor(np.random.default_rng(1).normal(size=(2, 3, K)))
        out = ad.conv1d_transpose(x, k, stride)
        assert out.data.shape == (1, 3, stride * L)

    @pytest.mark.parametrize("stride", [1, 2, 4])
    def test_adjoint_identity(self, stride):
        # <conv1d(x, k), y> == <x, conv1d_transpose(y, k)> with matched trim
        rng = np.random.default_rng(stride + 99)
        L = stride * 12
        K = 2 * stride + 3
        x = rng.normal(size=(2, 3, L))
        kc = rng.normal(size=(4, 3, K))
        y = rng.normal(size=(2, 4, L // stride))
        fwd = ad.pad_conv1d(Tensor(x), Tensor(kc), stride).data
        lhs = float((fwd * y).sum())
        bwd = ad.conv1d_transpose(Tensor(y), Tensor(kc), stride).data
        rhs = float((x * bwd).sum())
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))

    def test_conv_grads(self):
        x = Tensor(RNG.normal(size=(2, 2, 9)), requires_grad=True)
        k = Tensor(RNG.normal(size=(3, 2, 3)), requires_grad=True)
        check_grads(lambda: proj_loss(ad.conv1d(x, k, 2)), [x, k])

    def test_transpose_grads(self):
        x = Tensor(RNG.normal(size=(2, 2, 5)), requires_grad=True)
        k = Tensor(RNG.normal(size=(2, 3, 6)), requires_grad=True)
        check_grads(lambda: proj_loss(ad.conv1d_transpose(x, k, 2)), [x, k])

    def test_pad_conv_grads(self):
        x = Tensor(RNG.normal(size=(1, 2, 8)), requires_grad=True)
        k = Tensor(RNG.normal(size=(3, 2, 5)), requires_grad=True)
        check_grads(lambda: proj_loss(ad.pad_conv1d(x, k, 4)), [x, k])

    def test_conv1d_rejects_short_input(self):
        with pytest.raises(ContractViolation):
            ad.conv1d(Tensor(np.ones((1, 1, 2))), Tensor(np.ones((1, 1, 5))), 1)

    def test_conv1d_rejects_channel_mismatch(self):
        with pytest.raises(ContractViolation):
            ad.conv1d(Tensor(np.ones((1, 2, 8))), Tensor(np.ones((1, 3, 3))), 1)


# ---------------------------------------------------------------------------
# Frame ops
# ---------------------------------------------------------------------------


class TestFrames:
    def test_framewise_correlate_matches_naive(self):
        rng = np.random.default_rng(3)
        frames = rng.normal(size=(2, 3, 8))
        kernels = rng.normal(size=(2, 3, 4))
        got = ad.framewise_correlate(Tensor(frames), Tensor(kernels)).data
        want = np.zeros((2, 3, 5))
        for b in range(2):
            for t in range(3):
                for o in range(5):
                    want[b, t, o] = (frames[b, t, o : o + 4] * kernels[b, t]).sum()
        assert np.allclose(got, want, atol=1e-12)

    def test_overlap_add_matches_naive(self):
        rng = np.random.default_rng(4)
        frames = rng.normal(size=(2, 4, 6))
        got = ad.overlap_add(Tensor(frames), 3).data
        want = np.zeros((2, 3 * 3 + 6))
        for t in range(4):
            want[:, t * 3 : t * 3 + 6] += frames[:, t]
        assert np.allclose(got, want, atol=1e-12)

    def test_frame_extract_inverts_layout(self):
        rng = np.random.default_rng(5)
        sig = rng.normal(size=(1, 12))
        frames = ad.frame_extract(Tensor(sig), 3, 5, 3).data
        for t in range(3):
            assert np.array_equal(frames[0, t], sig[0, t * 3 : t * 3 + 5])

    def test_frame_grads(self):
        frames = Tensor(RNG.normal(size=(1, 3, 6)), requires_grad=True)
        kernels = Tensor(RNG.normal(size=(1, 3, 3)), requires_grad=True)
        check_grads(
            lambda: proj_loss(ad.framewise_correlate(frames, kernels)),
            [frames, kernels],
        )
        check_grads(lambda: proj_loss(ad.overlap_add(frames, 2)), [frames])
        sig = Tensor(RNG.normal(size=(2, 10)), requires_grad=True)
        check_grads(lambda: proj_loss(ad.frame_extract(sig, 2, 4, 4)), [sig])
