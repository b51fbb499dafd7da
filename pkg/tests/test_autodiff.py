import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsanomaly import autodiff as ad
from tsanomaly.autodiff import Tape, Tensor
from oracles import naive_conv, op_cases
from tsanomaly.errors import (
    ContractError,
    DimensionError,
    EvaluationError,
    NonFiniteError,
    ParameterError,
    StateError,
)

SEEDS = range(20)


class TestAffine:
    def test_identity_weight(self):
        out = ad.affine([[1.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_zero_weight_passes_bias(self):
        out = ad.affine([[1.0, 2.0]], [[0.0, 0.0], [0.0, 0.0]], [3.0, 4.0])
        np.testing.assert_array_equal(out.data, [[3, 4]])

    def test_ones(self):
        out = ad.affine([[1.0, 2.0]], [[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0])
        np.testing.assert_array_equal(out.data, [[4, 4]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            ad.affine(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))


class TestActivation:
    def test_values(self):
        assert ad.tanh(Tensor(0.0)).data == 0.0
        assert ad.sigmoid(Tensor(0.0)).data == 0.5
        assert abs(float(ad.tanh(Tensor(1.0)).data) - 0.761594) < 1e-6
        assert float(ad.tanh(Tensor(1.0)).data) == math.tanh(1.0)

    def test_sigmoid_matches_reference(self):
        x = np.linspace(-30, 30, 601)
        ref = np.array([1.0 / (1.0 + math.exp(-v)) for v in x])
        np.testing.assert_allclose(ad.sigmoid(Tensor(x)).data, ref, rtol=1e-14, atol=0)

    def test_sigmoid_large_inputs_do_not_overflow(self):
        y = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
        np.testing.assert_array_equal(y, [0.0, 1.0])

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            ad.activation(Tensor([1.0]), "relu")

    # float64 saturates tanh at |x| ~ 19 and the logistic at x ~ 37, so the
    # strict-bounds property is checked where the codomain is representable
    @given(st.lists(st.floats(-18, 18), min_size=1, max_size=50))
    def test_tanh_strictly_bounded(self, xs):
        y = ad.tanh(Tensor(xs)).data
        assert np.all(y > -1) and np.all(y < 1)

    @given(st.lists(st.floats(-700, 36), min_size=1, max_size=50))
    def test_sigmoid_strictly_bounded(self, xs):
        y = ad.sigmoid(Tensor(xs)).data
        assert np.all(y > 0) and np.all(y < 1)


class TestConv:
    def test_dilated_causal_example(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        k = np.array([1.0, 1.0]).reshape(2, 1, 1)
        out = ad.conv1d_dilated(x, k, np.zeros(1), dilation=2, padding="causal")
        np.testing.assert_array_equal(out.data[:, 0], [1, 2, 4, 6])
        np.testing.assert_array_equal(naive_conv(x, k, np.zeros(1), 2, "causal")[:, 0], [1, 2, 4, 6])

    @pytest.mark.parametrize("dilation", [1, 3, 7])
    def test_delta_kernel_is_identity(self, dilation):
        x = np.random.default_rng(0).normal(size=(9, 1))
        out = ad.conv1d_dilated(x, np.ones((1, 1, 1)), np.zeros(1), dilation=dilation)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input(self):
        out = ad.conv1d_dilated(np.zeros((6, 2)), np.ones((3, 2, 4)), np.zeros(4), dilation=2)
        np.testing.assert_array_equal(out.data, np.zeros((6, 4)))

    @pytest.mark.parametrize("padding", ["causal", "same"])
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_oracle(self, padding, seed):
        rng = np.random.default_rng(seed)
        T, C, K, O = rng.integers(1, 12), rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 4)
        d = int(rng.integers(1, 4))
        x, k, b = rng.normal(size=(T, C)), rng.normal(size=(K, C, O)), rng.normal(size=O)
        got = ad.conv1d_dilated(x, k, b, d, padding).data
        np.testing.assert_allclose(got, naive_conv(x, k, b, d, padding), rtol=1e-12, atol=1e-12)

    def test_batched_equals_per_window(self):
        rng = np.random.default_rng(1)
        x, k, b = rng.normal(size=(4, 10, 3)), rng.normal(size=(3, 3, 5)), rng.normal(size=5)
        batched = ad.conv1d_dilated(x, k, b, 2).data
        for i in range(4):
            np.testing.assert_array_equal(batched[i], ad.conv1d_dilated(x[i], k, b, 2).data)

    def test_bad_parameters(self):
        x = np.ones((5, 1))
        with pytest.raises(ParameterError):
            ad.conv1d_dilated(x, np.ones((2, 1, 1)), np.zeros(1), dilation=0)
        with pytest.raises(ParameterError):
            ad.conv1d_dilated(x, np.ones((0, 1, 1)), np.zeros(1), dilation=1)
        with pytest.raises(ParameterError):
            ad.conv1d_dilated(x, np.ones((2, 1, 1)), np.zeros(1), padding="valid")

    @given(
        T=st.integers(1, 20), K=st.integers(1, 5), d=st.integers(1, 4),
        padding=st.sampled_from(["causal", "same"]),
    )
    @settings(max_examples=40, deadline=None)
    def test_length_preserved(self, T, K, d, padding):
        out = ad.conv1d_dilated(np.ones((T, 2)), np.ones((K, 2, 3)), np.zeros(3), d, padding)
        assert out.shape == (T, 3)

    @given(seed=st.integers(0, 10_000), T=st.integers(2, 16), t=st.integers(0, 14))
    @settings(max_examples=60, deadline=None)
    def test_causal_ignores_future_rows(self, seed, T, t):
        t = min(t, T - 2)
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(T, 2))
        k, b = rng.normal(size=(3, 2, 2)), rng.normal(size=2)
        d = int(rng.integers(1, 4))
        y = rng.normal(size=(T, 2)) * 100
        y[: t + 1] = x[: t + 1]
        a = ad.conv1d_dilated(x, k, b, d).data
        c = ad.conv1d_dilated(y, k, b, d).data
        assert np.array_equal(a[: t + 1], c[: t + 1])


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor(np.arange(5.0))
        assert np.array_equal(ad.dropout_mask(x, 0.0, 1).data, x.data)

    @given(rate=st.floats(0, 0.99), seed=st.integers(0, 2**31))
    @settings(max_examples=30)
    def test_inference_identity_bitwise(self, rate, seed):
        x = np.random.default_rng(seed).normal(size=17)
        out = ad.dropout_mask(Tensor(x), rate, seed, training=False).data
        assert out.tobytes() == x.tobytes()

    def test_mean_preserved(self):
        out = ad.dropout_mask(Tensor(np.ones(100_000)), 0.2, 123).data
        assert abs(out.mean() - 1.0) < 0.01
        survivors = out[out != 0]
        np.testing.assert_allclose(survivors, 1.25)

    def test_same_seed_same_mask(self):
        a = ad.dropout_mask(Tensor(np.ones(50)), 0.5, 7).data
        b = ad.dropout_mask(Tensor(np.ones(50)), 0.5, 7).data
        assert np.array_equal(a, b)

    def test_rate_one_rejected(self):
        with pytest.raises(ParameterError):
            ad.dropout_mask(Tensor(np.ones(3)), 1.0, 0)


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            y = x * x
        assert float(ad.backward(y, tape)[x]) == 6.0

    def test_tanh_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        with Tape() as tape:
            y = ad.tanh(x)
        assert float(ad.backward(y, tape)[x]) == 1.0

    def test_reused_operand_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            y = ad.total((x * x) * x + x)
        assert float(ad.backward(y, tape)[x][0]) == 13.0

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * x
        with pytest.raises(ContractError):
            ad.backward(y, tape)

    def test_record_single_use(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape() as tape:
            y = x * x
        ad.backward(y, tape)
        with pytest.raises(StateError):
            ad.backward(y, tape)

    def test_loss_not_on_tape(self):
        with Tape() as tape:
            pass
        with pytest.raises(ContractError):
            ad.backward(Tensor(1.0), tape)

    def test_no_tape_no_recording(self):
        x = Tensor(1.0, requires_grad=True)
        y = x * x
        assert not y.requires_grad

    def test_nan_is_surfaced(self):
        with pytest.raises(NonFiniteError):
            ad.mul(Tensor([np.inf]), Tensor([0.0]))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv_mse_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(8, 2))
        k = rng.normal(size=(3, 2, 2))
        b = rng.normal(size=2)
        target = rng.normal(size=(8, 2))
        # differentiate w.r.t. every operand at once
        sizes = [x.size, k.size, b.size]
        point = np.concatenate([x.ravel(), k.ravel(), b.ravel()])

        def f(p):
            xs = ad.reshape(p[0:sizes[0]], x.shape)
            ks = ad.reshape(p[sizes[0]:sizes[0] + sizes[1]], k.shape)
            bs = p[sizes[0] + sizes[1]:]
            return ad.mse(ad.conv1d_dilated(xs, ks, bs, 1, "causal"), target)

        assert ad.finite_difference_check(f, point, 1e-5) < 1e-6


def _lstm_cell_loss(point, shapes, target):
    from tsanomaly.models import lstm_cell

    parts, start = [], 0
    for s in shapes:
        n = int(np.prod(s))
        parts.append(ad.reshape(point[start:start + n], s))
        start += n
    x, h, c, wx, wh, b = parts
    h2, c2 = lstm_cell(x, h, c, wx, wh, b)
    return ad.mse(h2 + c2, target)


class TestFiniteDifferenceCheck:
    def test_quadratic(self):
        point = np.random.default_rng(0).normal(size=10)
        assert ad.finite_difference_check(lambda x: ad.total(x * x), point, 1e-5) < 1e-8

    def test_lstm_cell_composite(self):
        rng = np.random.default_rng(3)
        C, U, B = 3, 4, 2
        shapes = [(B, C), (B, U), (B, U), (C, 4 * U), (U, 4 * U), (4 * U,)]
        point = rng.normal(size=sum(int(np.prod(s)) for s in shapes)) * 0.5
        target = rng.normal(size=(B, U))
        err = ad.finite_difference_check(lambda p: _lstm_cell_loss(p, shapes, target), point, 1e-5)
        assert err < 1e-6

    def test_zero_epsilon(self):
        with pytest.raises(ParameterError):
            ad.finite_difference_check(lambda x: ad.total(x), np.ones(2), 0.0)

    def test_non_finite_function(self):
        def f(x):
            return ad.total(ad.mul(x, Tensor([np.inf])))

        with pytest.raises(EvaluationError):
            ad.finite_difference_check(f, np.ones(1), 1e-5)

    def test_detects_a_wrong_gradient(self):
        def wrong(x):
            # forward is x**2 but the recorded derivative is 3x
            return ad._emit(np.asarray((x.data ** 2).sum()), (x,), lambda g: (3.0 * x.data * g,), "wrong")

        assert ad.finite_difference_check(wrong, np.array([1.0, 2.0]), 1e-5) > 0.1


OPS = sorted(op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("op", OPS)
@pytest.mark.parametrize("seed", SEEDS)
def test_primitive_gradients(op, seed):
    point, f = op_cases(np.random.default_rng(seed))[op]
    assert ad.finite_difference_check(f, point, 1e-5) < 1e-6
