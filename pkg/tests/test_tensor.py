import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from dualadapt import tensor as T
from dualadapt.gradcheck import grad_check
from dualadapt.params import ParamStore
from dualadapt.tensor import NonFiniteError, ShapeError, Tensor

from conftest import check_op_gradients


# ---------------------------------------------------------------------------
# loop oracles
# ---------------------------------------------------------------------------

def matmul_oracle(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


def conv1d_oracle(x, w, b):
    bsz, cin, t = x.shape
    cout, _, k = w.shape
    pad = (k - 1) // 2
    out = np.zeros((bsz, cout, t))
    for n in range(bsz):
        for o in range(cout):
            for s in range(t):
                acc = b[o]
                for c in range(cin):
                    for j in range(k):
                        src = s + j - pad
                        if 0 <= src < t:
                            acc += w[o, c, j] * x[n, c, src]
                out[n, o, s] = acc
    return out


def attention_oracle(q, k, v, heads):
    bsz, n, d = q.shape
    dh = d // heads
    out = np.zeros((bsz, n, d))
    for b in range(bsz):
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            for i in range(n):
                logits = [sum(q[b, i, sl] * k[b, j, sl]) / math.sqrt(dh) for j in range(k.shape[1])]
                m = max(logits)
                e = [math.exp(l - m) for l in logits]
                z = sum(e)
                for j in range(k.shape[1]):
                    out[b, i, sl] += e[j] / z * v[b, j, sl]
    return out


def conv2d_oracle(x, w, b):
    bsz, hgt, wid, cin = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((bsz, hgt, wid, cout))
    for n in range(bsz):
        for i in range(hgt):
            for j in range(wid):
                acc = b.copy()
                for di in range(kh):
                    for dj in range(kw):
                        si, sj = i + di - ph, j + dj - pw
                        if 0 <= si < hgt and 0 <= sj < wid:
                            acc = acc + x[n, si, sj] @ w[di, dj]
                out[n, i, j] = acc
    return out


# ---------------------------------------------------------------------------

class TestTensorBasics:
    def test_data_is_double(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,) and t.size == 3

    def test_invariant_size_matches_shape(self, rng):
        t = Tensor(rng.normal(size=(2, 3, 4)))
        assert int(np.prod(t.shape)) == t.data.size

    def test_grad_shape_matches_data(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        (x * x).sum().backward()
        assert x.grad.shape == x.shape

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_grad_accumulates_over_reuse(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x + x).sum().backward()
        assert x.grad[0] == pytest.approx(7.0)

    def test_no_grad_builds_no_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with T.no_grad():
            y = x * 3.0
        assert not y.requires_grad
        assert T.is_grad_enabled()

    def test_reflected_ndarray_ops(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = np.array([3.0, 4.0]) * x
        assert isinstance(y, Tensor)
        y.sum().backward()
        np.testing.assert_array_equal(x.grad, [3.0, 4.0])

    def test_debug_mode_raises_on_nan(self):
        T.set_debug(True)
        try:
            with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
                T.log(Tensor([-1.0]))
        finally:
            T.set_debug(False)

    def test_release_mode_is_silent(self):
        with np.errstate(invalid="ignore"):
            out = T.log(Tensor([-1.0]))
        assert np.isnan(out.data[0])

    def test_determinism(self, rng):
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
        r1 = T.softmax(T.matmul(Tensor(a), Tensor(b)), axis=-1).data
        r2 = T.softmax(T.matmul(Tensor(a), Tensor(b)), axis=-1).data
        assert r1.tobytes() == r2.tobytes()


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)

    def test_scalar_case(self):
        assert T.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data.tolist() == [[6.0]]

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, matmul_oracle(a, b), atol=1e-12)

    def test_batched_against_loop_oracle(self, rng):
        a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 5, 2))
        out = T.matmul(Tensor(a), Tensor(b)).data
        for i in range(3):
            np.testing.assert_allclose(out[i], matmul_oracle(a[i], b[i]), atol=1e-12)

    def test_batch_by_shared_matrix(self, rng):
        a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 2))
        out = T.matmul(Tensor(a), Tensor(b)).data
        for i in range(3):
            np.testing.assert_allclose(out[i], matmul_oracle(a[i], b), atol=1e-12)

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    @pytest.mark.parametrize("shapes", [[(4, 5), (5, 2)], [(3, 4, 5), (3, 5, 2)], [(2, 4, 5), (5, 3)]])
    def test_gradients(self, shapes, rng):
        check_op_gradients(T.matmul, shapes, rng)


class TestSoftmax:
    def test_equal_logits(self):
        np.testing.assert_allclose(T.softmax(Tensor([2.5, 2.5, 2.5])).data, [1 / 3] * 3, atol=1e-15)

    def test_single_element(self):
        assert T.softmax(Tensor([[7.0]]), axis=-1).data.tolist() == [[1.0]]

    def test_closed_form_ln3(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)

    def test_stable_for_large_logits(self):
        out = T.softmax(Tensor([1000.0, 1000.0 + math.log(3.0)])).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_empty_axis_raises(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor(np.zeros((2, 0))), axis=-1)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                      elements=st.floats(-50, 50)),
           st.integers(0, 2))
    def test_sums_to_one(self, x, axis):
        axis = axis % x.ndim
        out = T.softmax(Tensor(x), axis=axis).data
        assert np.all(out > 0) and np.all(out <= 1.0)
        np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-12)

    @pytest.mark.parametrize("axis", [0, 1, -1])
    def test_gradients(self, axis, rng):
        check_op_gradients(lambda x: T.softmax(x, axis=axis), [(3, 4)], rng)


class TestConv1d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 5))
        w = np.zeros((3, 3, 3))
        for c in range(3):
            w[c, c, 1] = 1.0
        out = T.conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(3))).data
        np.testing.assert_array_equal(out, x)

    def test_zero_weights_give_bias(self, rng):
        b = np.array([0.5, -1.0])
        out = T.conv1d(Tensor(rng.normal(size=(2, 3, 4))), Tensor(np.zeros((2, 3, 3))), Tensor(b)).data
        np.testing.assert_array_equal(out, np.broadcast_to(b[None, :, None], (2, 2, 4)))

    def test_direct_summation_oracle(self, rng):
        x, w, b = rng.normal(size=(2, 3, 6)), rng.normal(size=(4, 3, 3)), rng.normal(size=4)
        np.testing.assert_allclose(T.conv1d(Tensor(x), Tensor(w), Tensor(b)).data, conv1d_oracle(x, w, b),
                                   atol=1e-12)

    def test_depthwise_matches_diagonal_full_kernel(self, rng):
        x, wd, b = rng.normal(size=(2, 3, 5)), rng.normal(size=(3, 1, 3)), rng.normal(size=3)
        full = np.zeros((3, 3, 3))
        for c in range(3):
            full[c, c] = wd[c, 0]
        out = T.conv1d(Tensor(x), Tensor(wd), Tensor(b), depthwise=True).data
        np.testing.assert_allclose(out, conv1d_oracle(x, full, b), atol=1e-12)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.conv1d(Tensor(np.ones((1, 3, 4))), Tensor(np.ones((2, 2, 3))), Tensor(np.zeros(2)))

    def test_even_kernel_raises(self):
        with pytest.raises(ShapeError):
            T.conv1d(Tensor(np.ones((1, 2, 4))), Tensor(np.ones((2, 2, 2))), Tensor(np.zeros(2)))

    def test_gradients(self, rng):
        check_op_gradients(T.conv1d, [(2, 3, 5), (4, 3, 3), (4,)], rng)


class TestConv2d:
    def test_loop_oracle(self, rng):
        x, w, b = rng.normal(size=(2, 4, 5, 3)), rng.normal(size=(3, 3, 3, 2)), rng.normal(size=2)
        np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, conv2d_oracle(x, w, b),
                                   atol=1e-12)

    def test_gradients(self, rng):
        check_op_gradients(T.conv2d, [(1, 4, 4, 2), (3, 3, 2, 3), (3,)], rng)


class TestLayerNorm:
    def test_constant_vector(self):
        out = T.layer_norm(Tensor([[4.0, 4.0, 4.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_array_equal(out, 0.0)

    def test_plus_minus_one(self):
        out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-6)

    def test_beta_shift_sets_mean(self, rng):
        beta = 0.7
        out = T.layer_norm(Tensor(rng.normal(size=(5, 8))), Tensor(np.ones(8)), Tensor(np.full(8, beta))).data
        np.testing.assert_allclose(out.mean(axis=-1), beta, atol=1e-12)

    def test_gradients(self, rng):
        check_op_gradients(T.layer_norm, [(3, 6), (6,), (6,)], rng)


class TestAttention:
    def test_single_key(self, rng):
        q, k, v = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 1, 4)), rng.normal(size=(1, 1, 4))
        out = T.attention(Tensor(q), Tensor(k), Tensor(v), heads=2).data
        np.testing.assert_allclose(out, np.broadcast_to(v, (1, 3, 4)), atol=1e-15)

    def test_identical_keys_average_values(self, rng):
        q = rng.normal(size=(1, 2, 4))
        k = np.broadcast_to(rng.normal(size=(1, 1, 4)), (1, 5, 4)).copy()
        v = rng.normal(size=(1, 5, 4))
        out = T.attention(Tensor(q), Tensor(k), Tensor(v), heads=1).data
        np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True), (1, 2, 4)), atol=1e-14)

    def test_per_head_loop_oracle(self, rng):
        q, k, v = (rng.normal(size=(2, 6, 8)) for _ in range(3))
        np.testing.assert_allclose(T.attention(Tensor(q), Tensor(k), Tensor(v), heads=2).data,
                                   attention_oracle(q, k, v, 2), atol=1e-10)

    def test_head_divisibility(self):
        with pytest.raises(ShapeError):
            T.attention(Tensor(np.ones((1, 2, 6))), Tensor(np.ones((1, 2, 6))), Tensor(np.ones((1, 2, 6))), heads=4)

    def test_gradients(self, rng):
        check_op_gradients(lambda q, k, v: T.attention(q, k, v, heads=2), [(1, 4, 4)] * 3, rng)


class TestElementwiseGradients:
    @pytest.mark.parametrize("op", [T.exp, T.sigmoid, T.gelu, T.neg, T.relu, T.abs_, lambda x: T.power(x, 3.0)])
    def test_unary(self, op, rng):
        check_op_gradients(op, [(3, 4)], rng)

    @pytest.mark.parametrize("op", [T.log, T.sqrt, lambda x: T.clip(x, 0.8, 1.2)])
    def test_unary_positive_domain(self, op, rng):
        check_op_gradients(op, [(3, 4)], rng, positive=True)

    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.maximum, T.minimum])
    def test_binary(self, op, rng):
        check_op_gradients(op, [(3, 4), (3, 4)], rng)

    def test_division(self, rng):
        check_op_gradients(T.div, [(3, 4), (3, 4)], rng, positive=True)

    def test_broadcast_add(self, rng):
        check_op_gradients(T.add, [(3, 4), (4,)], rng)

    def test_broadcast_mul(self, rng):
        check_op_gradients(T.mul, [(2, 3, 4), (3, 1)], rng)

    def test_gelu_reference(self):
        x = np.array([-1.0, 0.0, 0.5, 2.0])
        ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(T.gelu(Tensor(x)).data, ref, atol=1e-15)

    def test_sigmoid_extremes_finite(self):
        out = T.sigmoid(Tensor([-800.0, 0.0, 800.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-300)


class TestShapeOpGradients:
    def test_reshape_transpose(self, rng):
        check_op_gradients(lambda x: x.reshape(4, 6).transpose(1, 0), [(2, 3, 4)], rng)

    def test_slicing(self, rng):
        check_op_gradients(lambda x: x[:, 1:3], [(3, 4)], rng)

    def test_fancy_index_with_repeats(self, rng):
        idx = np.array([0, 2, 2, 1])
        check_op_gradients(lambda x: x[idx, np.array([1, 0, 0, 3])], [(3, 4)], rng)

    def test_concat(self, rng):
        check_op_gradients(lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 5)], rng)

    def test_stack(self, rng):
        check_op_gradients(lambda a, b: T.stack([a, b], axis=1), [(2, 3), (2, 3)], rng)

    @pytest.mark.parametrize("axis", [None, 0, (0, 2)])
    def test_sum_mean(self, axis, rng):
        check_op_gradients(lambda x: T.tsum(x, axis=axis), [(2, 3, 4)], rng)
        check_op_gradients(lambda x: T.mean(x, axis=axis, keepdims=True), [(2, 3, 4)], rng)


class TestGradCheck:
    def test_square_closed_form(self, rng):
        store = ParamStore()
        store.add("x", rng.normal(size=5), trainable=True)
        assert grad_check(lambda: (store["x"] * store["x"]).sum(), store) < 1e-7

    def test_linear_is_exact(self, rng):
        store = ParamStore()
        store.add("x", rng.normal(size=5), trainable=True)
        c = rng.normal(size=5)
        assert grad_check(lambda: (store["x"] * c).sum(), store) < 1e-9

    def test_non_finite_loss_raises(self):
        store = ParamStore()
        store.add("x", np.array([-1.0]), trainable=True)
        with np.errstate(invalid="ignore"):
            with pytest.raises(NonFiniteError):
                grad_check(lambda: T.log(store["x"]).sum(), store)

    def test_detects_wrong_gradient(self, rng):
        store = ParamStore()
        store.add("x", rng.uniform(1, 2, size=3), trainable=True)

        def bad_square(x):
            return T._result(x.data ** 2, (x,), lambda g: (g * x.data,))  # off by a factor of 2

        assert grad_check(lambda: bad_square(store["x"]).sum(), store) > 0.3

    def test_frozen_params_skipped(self, rng):
        store = ParamStore()
        store.add("a", rng.normal(size=2), trainable=True)
        store.add("b", rng.normal(size=2), trainable=False)
        from dualadapt.gradcheck import grad_check_report
        report = grad_check_report(lambda: (store["a"] * store["b"]).sum(), store)
        assert list(report) == ["a"]
