import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strmatch import tensor as T
from strmatch.errors import ConfigError, DegenerateInputError, ShapeError


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive triple-loop matrix product, the reference for matmul."""
    m, k = a.shape
    k2, r = b.shape
    assert k == k2
    out = np.zeros((m, r), dtype=np.float64)
    for i in range(m):
        for j in range(r):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def check_grad(f, x, rtol=1e-4, atol=1e-8, step=1e-5):
    """Compare backward() against central finite differences."""
    xt = T.tensor(x, requires_grad=True, dtype=np.float64)
    loss = f(xt)
    T.backward(loss)
    got = xt.grad
    want = T.finite_diff_grad(lambda v: f(v), T.tensor(x, dtype=np.float64), step=step)
    np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)


class TestMatmul:
    def test_identity(self):
        out = T.matmul(T.tensor(np.eye(2)), T.tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_row_times_column(self):
        out = T.matmul(T.tensor([[1.0, 2.0]]), T.tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = T.matmul(T.tensor(a), T.tensor(b))
        np.testing.assert_allclose(out.data, matmul_oracle(a, b), rtol=0, atol=1e-12)

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_oracle_property(self, m, k, r, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, r))
        out = T.matmul(T.tensor(a), T.tensor(b))
        np.testing.assert_allclose(out.data, matmul_oracle(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            T.matmul(T.tensor(np.zeros((2, 3))), T.tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)

    def test_batched_broadcast(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(2, 3, 4, 5))
        b = rng.normal(size=(5, 6))
        out = T.matmul(T.tensor(a), T.tensor(b))
        np.testing.assert_allclose(out.data, a @ b, atol=1e-12)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax_last(T.tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_analytic(self):
        out = T.softmax_last(T.tensor([math.log(2.0), 0.0]))
        np.testing.assert_allclose(out.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_no_overflow(self):
        out = T.softmax_last(T.tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_rows_stochastic_and_positive(self, k, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=5.0, size=(3, k))
        out = T.softmax_last(T.tensor(x))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(out.data > 0.0)


class TestCosineLoss:
    def test_self_similarity(self):
        v = T.tensor([1.0, -2.0, 3.0])
        assert T.cosine_loss(v, v).item() == pytest.approx(-1.0, abs=1e-12)

    def test_antiparallel(self):
        v = T.tensor([0.5, 2.0])
        assert T.cosine_loss(v, T.neg(v)).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert T.cosine_loss(T.tensor([1.0, 0.0]), T.tensor([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-15)

    def test_zero_input_degenerate(self):
        with pytest.raises(DegenerateInputError):
            T.cosine_loss(T.tensor([0.0, 0.0]), T.tensor([0.0, 0.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.cosine_loss(T.tensor([1.0, 2.0]), T.tensor([1.0, 2.0, 3.0]))


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        T.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_cosine_stationary_at_parallel(self):
        x = T.tensor([1.0, 2.0, -0.5], requires_grad=True)
        loss = T.cosine_loss(x, x.detach())
        T.backward(loss)
        assert np.max(np.abs(x.grad)) <= 1e-12

    def test_non_scalar_loss_rejected(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            T.backward(x * 2.0)

    def test_unconnected_loss_rejected(self):
        with pytest.raises(ShapeError):
            T.backward(T.tensor(3.0))

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(3)
        x = T.tensor(rng.normal(size=(4, 5)), requires_grad=True)
        w = T.tensor(rng.normal(size=(5, 4)))

        def run():
            prod = T.matmul(x, w)
            loss = T.tsum(T.mul(T.softmax_last(prod), prod))
            T.backward(loss)
            return x.grad.copy()

        g1 = run()
        g2 = run()
        assert np.array_equal(g1, g2)

    def test_detach_cuts_graph(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        y = x * 3.0
        loss = T.tsum(y.detach() * x)
        T.backward(loss)
        np.testing.assert_array_equal(x.grad, [3.0, 6.0])

    def test_grad_accumulates_within_one_pass(self):
        x = T.tensor([2.0], requires_grad=True)
        loss = T.tsum(x * x + x)
        T.backward(loss)
        np.testing.assert_allclose(x.grad, [5.0])


class TestFiniteDiff:
    def test_sum_of_squares(self):
        got = T.finite_diff_grad(lambda v: T.tsum(v * v), T.tensor([1.0, 2.0]))
        np.testing.assert_allclose(got, [2.0, 4.0], atol=1e-6)

    def test_cosine_cross_check(self):
        rng = np.random.default_rng(5)
        y = T.tensor(rng.normal(size=7))
        check_grad(lambda v: T.cosine_loss(v, y), rng.normal(size=7))

    def test_constant_function(self):
        got = T.finite_diff_grad(lambda v: 4.25, T.tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(got, np.zeros(3))

    def test_bad_step_rejected(self):
        with pytest.raises(ConfigError):
            T.finite_diff_grad(lambda v: 0.0, T.tensor([1.0]), step=0.0)


class TestGradcheckAllOps:
    """Every differentiable primitive against the finite-difference oracle."""

    rng = np.random.default_rng(11)
    w6 = rng.normal(size=6)
    w23 = rng.normal(size=(2, 3))
    w234 = rng.normal(size=(2, 3, 4))

    def test_add(self):
        check_grad(lambda x: T.tsum(T.mul(x + 1.5, self.w23)), self.rng.normal(size=(2, 3)))

    def test_add_broadcast(self):
        y = T.tensor(self.rng.normal(size=(3,)))
        check_grad(lambda x: T.tsum(T.mul(x + y, self.w23)), self.rng.normal(size=(2, 3)))

    def test_sub(self):
        check_grad(lambda x: T.tsum(T.mul(2.0 - x, self.w23)), self.rng.normal(size=(2, 3)))

    def test_mul(self):
        y = T.tensor(self.rng.normal(size=(2, 3)))
        check_grad(lambda x: T.tsum(T.mul(T.mul(x, y), self.w23)), self.rng.normal(size=(2, 3)))

    def test_div(self):
        y = T.tensor(2.0 + np.abs(self.rng.normal(size=(2, 3))))
        check_grad(lambda x: T.tsum(T.mul(T.div(x, y), self.w23)), self.rng.normal(size=(2, 3)))

    def test_div_denominator(self):
        y = T.tensor(self.rng.normal(size=(2, 3)))
        check_grad(lambda x: T.tsum(T.mul(T.div(y, x), self.w23)),
                   2.0 + np.abs(self.rng.normal(size=(2, 3))))

    def test_matmul_left(self):
        b = T.tensor(self.rng.normal(size=(3, 4)))
        w = self.rng.normal(size=(2, 4))
        check_grad(lambda x: T.tsum(T.mul(T.matmul(x, b), w)), self.rng.normal(size=(2, 3)))

    def test_matmul_right(self):
        a = T.tensor(self.rng.normal(size=(2, 3)))
        w = self.rng.normal(size=(2, 4))
        check_grad(lambda x: T.tsum(T.mul(T.matmul(a, x), w)), self.rng.normal(size=(3, 4)))

    def test_sum_axis(self):
        w = self.rng.normal(size=(2, 4))
        check_grad(lambda x: T.tsum(T.mul(T.tsum(x, axis=1), w)), self.rng.normal(size=(2, 3, 4)))

    def test_mean_axes(self):
        w = self.rng.normal(size=(4,))
        check_grad(lambda x: T.tsum(T.mul(T.tmean(x, axis=(0, 1)), w)), self.rng.normal(size=(2, 3, 4)))

    def test_reshape(self):
        check_grad(lambda x: T.tsum(T.mul(T.reshape(x, (6,)), self.w6)), self.rng.normal(size=(2, 3)))

    def test_swapaxes(self):
        w = self.rng.normal(size=(3, 2))
        check_grad(lambda x: T.tsum(T.mul(T.swapaxes(x, 0, 1), w)), self.rng.normal(size=(2, 3)))

    def test_transpose(self):
        w = self.rng.normal(size=(4, 2, 3))
        check_grad(lambda x: T.tsum(T.mul(T.transpose(x, (2, 0, 1)), w)), self.rng.normal(size=(2, 3, 4)))

    def test_getitem(self):
        w = self.rng.normal(size=(2, 2))
        check_grad(lambda x: T.tsum(T.mul(x[1:, :2], w)), self.rng.normal(size=(3, 4)))

    def test_concat(self):
        y = T.tensor(self.rng.normal(size=(2, 3)))
        w = self.rng.normal(size=(4, 3))
        check_grad(lambda x: T.tsum(T.mul(T.concat([x, y], axis=0), w)), self.rng.normal(size=(2, 3)))

    def test_repeat_interleave(self):
        w = self.rng.normal(size=(2, 6))
        check_grad(lambda x: T.tsum(T.mul(T.repeat_interleave(x, 2, axis=1), w)), self.rng.normal(size=(2, 3)))

    def test_tanh(self):
        check_grad(lambda x: T.tsum(T.mul(T.tanh(x), self.w23)), self.rng.normal(size=(2, 3)))

    def test_exp(self):
        check_grad(lambda x: T.tsum(T.mul(T.exp(x), self.w23)), self.rng.normal(size=(2, 3)))

    def test_sqrt(self):
        check_grad(lambda x: T.tsum(T.mul(T.sqrt(x), self.w23)),
                   1.0 + np.abs(self.rng.normal(size=(2, 3))))

    def test_softmax_last(self):
        check_grad(lambda x: T.tsum(T.mul(T.softmax_last(x), self.w234)), self.rng.normal(size=(2, 3, 4)))

    def test_neg(self):
        check_grad(lambda x: T.tsum(T.mul(T.neg(x), self.w23)), self.rng.normal(size=(2, 3)))


class TestProfiles:
    def test_default_is_float64(self):
        assert T.tensor([1.0]).dtype == np.float64

    def test_fast_profile_float32(self):
        with T.use_profile("fast"):
            assert T.tensor([1.0]).dtype == np.float32
        assert T.tensor([1.0]).dtype == np.float64

    def test_unknown_profile_rejected(self):
        with pytest.raises(ConfigError):
            T.set_profile("turbo")

    def test_finite_after_ops(self):
        rng = np.random.default_rng(9)
        x = T.tensor(rng.normal(scale=100.0, size=(4, 4)), requires_grad=True)
        y = T.softmax_last(T.matmul(x, x))
        loss = T.cosine_loss(y, T.tensor(np.ones((4, 4))))
        T.backward(loss)
        assert np.all(np.isfinite(y.data))
        assert np.all(np.isfinite(x.grad))


class TestTapeInvariants:
    def test_trace_visits_each_node_once(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        y = x * 2.0
        z = y + y  # diamond: y reachable twice
        loss = T.tsum(z)
        tape = T.Tape.trace(loss)
        ids = [id(n) for n in tape.nodes]
        assert len(ids) == len(set(ids))
        # parents precede children
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for p in node._parents:
                if id(p) in pos:
                    assert pos[id(p)] < pos[id(node)]

    def test_diamond_gradient(self):
        x = T.tensor([3.0], requires_grad=True)
        y = x * 2.0
        loss = T.tsum(y + y)
        T.backward(loss)
        np.testing.assert_allclose(x.grad, [4.0])
