import numpy as np
import pytest

from core.exceptions import NotScalarLoss, ShapeMismatch, UnboundInput
from nn.autodiff import (
    Graph, Tensor, absolute, add, backward, concat, conv1d, count_parameters, div, expand, forward, grad_check,
    irfft, matmul, mean, moving_average, mul, parameter, reduce_sum, relu, reshape, rfft, sigmoid, slice_axis,
    exact_split, sqrt, sub, swap_last, tanh,
)


def _graph(fn, params, inputs=("x",)):
    return Graph(lambda bound, ctx: {"y": fn(bound, params)}, params, inputs)


class TestForwardValues:
    def test_elementwise_ops_match_numpy(self):
        a = np.array([[1.0, -2.0], [3.0, 0.5]])
        b = np.array([[0.5, 4.0], [-1.0, 2.0]])
        assert np.array_equal(add(a, b).data, a + b)
        assert np.array_equal(sub(a, b).data, a - b)
        assert np.array_equal(mul(a, b).data, a * b)
        assert np.array_equal(div(a, b).data, a / b)
        assert np.array_equal(relu(a).data, np.maximum(a, 0.0))
        assert np.array_equal(absolute(a).data, np.abs(a))
        assert np.allclose(tanh(a).data, np.tanh(a))
        assert np.allclose(sigmoid(a).data, 1.0 / (1.0 + np.exp(-a)))

    def test_operators_build_the_same_nodes(self):
        x = Tensor([1.0, 2.0])
        y = Tensor([3.0, 5.0])
        assert np.array_equal((x + y).data, [4.0, 7.0])
        assert np.array_equal((x * y - y / y).data, [2.0, 9.0])
        assert np.array_equal((-x).data, [-1.0, -2.0])

    def test_leading_dimension_expansion(self):
        x = np.ones((2, 3, 4))
        bias = np.arange(4.0)
        assert add(x, bias).shape == (2, 3, 4)
        assert add(x, np.ones((3, 4))).shape == (2, 3, 4)

    def test_incompatible_broadcast_raises(self):
        with pytest.raises(ShapeMismatch):
            add(np.ones((2, 3)), np.ones((3, 2)))
        with pytest.raises(ShapeMismatch):
            add(np.ones((2, 3)), np.ones((2, 1)))

    def test_matmul_shape_checks(self):
        assert matmul(np.ones((5, 2, 3)), np.ones((3, 4))).shape == (5, 2, 4)
        with pytest.raises(ShapeMismatch):
            matmul(np.ones((2, 3)), np.ones((4, 5)))

    def test_reshape_and_slice_errors(self):
        with pytest.raises(ShapeMismatch):
            reshape(np.ones(6), (4, 2))
        with pytest.raises(ShapeMismatch):
            slice_axis(np.ones((3, 2)), 0, 2, 5)
        with pytest.raises(ShapeMismatch):
            expand(np.ones((2, 3)), (2, 4))

    def test_moving_average_keeps_length_and_constants(self):
        x = np.full((1, 10, 2), 0.37)
        out = moving_average(x, 5)
        assert out.shape == x.shape
        assert np.array_equal(out.data, x)

    def test_moving_average_uses_replicate_padding(self):
        x = np.arange(5.0).reshape(1, 5, 1)
        out = moving_average(x, 3).data.ravel()
        assert np.allclose(out, [1.0 / 3.0, 1.0, 2.0, 3.0, 11.0 / 3.0])

    @pytest.mark.parametrize("n", range(1, 65))
    def test_rfft_irfft_round_trip(self, n):
        x = np.random.default_rng(n).standard_normal((2, n, 3))
        z = rfft(x, axis=-2)
        assert z.shape == (2, n // 2 + 1, 3, 2)
        np.testing.assert_allclose(irfft(z, n=n, axis=-2).data, x, rtol=0, atol=1e-10)

    def test_constant_series_has_only_a_dc_bin(self):
        z = rfft(np.full((4, 1), 2.5), axis=-2).data
        assert z[0, 0, 0] == pytest.approx(10.0)
        np.testing.assert_allclose(z[0, 0, 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(z[1:], 0.0, atol=1e-12)

    def test_causal_conv_reads_only_the_past(self):
        x = np.zeros((1, 6, 1))
        x[0, 3, 0] = 1.0
        w = np.ones((3, 1, 1))
        out = conv1d(x, w, dilation=1, causal=True).data.ravel()
        assert np.array_equal(out[:3], [0.0, 0.0, 0.0])
        assert np.array_equal(out[3:], [1.0, 1.0, 1.0])


class TestBackward:
    def test_simple_chain_gradient(self):
        w = parameter(np.array([2.0, -3.0]))
        graph = _graph(lambda b, p: reduce_sum(mul(b["x"], p["w"])), {"w": w})
        out = forward(graph, {"x": np.array([5.0, 7.0])})
        grads = backward(graph, out["y"])
        assert np.array_equal(grads["w"], [5.0, 7.0])

    def test_reused_node_accumulates(self):
        w = parameter(np.array([3.0]))
        graph = _graph(lambda b, p: reduce_sum(mul(p["w"], p["w"])), {"w": w}, inputs=())
        grads = backward(graph, forward(graph, {})["y"])
        assert np.array_equal(grads["w"], [6.0])

    def test_non_scalar_loss_raises(self):
        w = parameter(np.ones(3))
        graph = _graph(lambda b, p: mul(b["x"], p["w"]), {"w": w})
        out = forward(graph, {"x": np.ones(3)})
        with pytest.raises(NotScalarLoss):
            backward(graph, out["y"])

    def test_unbound_input_raises(self):
        w = parameter(np.ones(3))
        graph = _graph(lambda b, p: mul(b["x"], p["w"]), {"w": w})
        with pytest.raises(UnboundInput):
            forward(graph, {})

    def test_unused_parameter_gets_zero_gradient(self):
        params = {"used": parameter(np.ones(2)), "unused": parameter(np.ones((2, 2)))}
        graph = _graph(lambda b, p: reduce_sum(mul(b["x"], p["used"])), params)
        grads = backward(graph, forward(graph, {"x": np.ones(2)})["y"])
        assert np.array_equal(grads["unused"], np.zeros((2, 2)))

    def test_count_parameters(self):
        params = {"a": parameter(np.ones((3, 4))), "b": parameter(np.ones(4))}
        assert count_parameters(params.values()) == 16
        assert Graph(lambda b, c: {}, params, ()).param_count() == 16


class TestGradCheck:
    @pytest.fixture
    def rng(self):
        return np.random.default_rng(3)

    def test_dense_stack(self, rng):
        params = {
            "w1": parameter(rng.standard_normal((4, 5))),
            "b1": parameter(rng.standard_normal(5)),
            "w2": parameter(rng.standard_normal((5, 2))),
        }

        def fn(b, p):
            h = tanh(add(matmul(b["x"], p["w1"]), p["b1"]))
            return sigmoid(matmul(h, p["w2"]))

        assert grad_check(_graph(fn, params), {"x": rng.standard_normal((3, 4))}) < 1e-5

    def test_reductions_and_shape_ops(self, rng):
        params = {"w": parameter(rng.standard_normal((2, 3, 4)))}

        def fn(b, p):
            x = mul(b["x"], p["w"])
            y = concat([swap_last(x), swap_last(b["x"])], axis=-1)
            z = mean(y, axis=-2, keepdims=True)
            t = mul(expand(z, y.shape), y)
            return sqrt(add(mul(t, t), 1.0))

        assert grad_check(_graph(fn, params), {"x": rng.uniform(0.5, 1.5, (2, 3, 4))}) < 1e-5

    def test_sequence_ops(self, rng):
        params = {
            "w": parameter(rng.standard_normal((3, 2, 4))),
            "bias": parameter(rng.standard_normal(4)),
        }

        def fn(b, p):
            h = conv1d(b["x"], p["w"], p["bias"], dilation=2, causal=True)
            h = moving_average(h, 3)
            return irfft(rfft(h, axis=-2), n=h.shape[-2], axis=-2)

        assert grad_check(_graph(fn, params), {"x": rng.standard_normal((2, 9, 2))}) < 1e-5

    def test_sampled_entries(self, rng):
        params = {"w": parameter(rng.standard_normal((20, 20)))}
        graph = _graph(lambda b, p: tanh(matmul(b["x"], p["w"])), params)
        assert grad_check(graph, {"x": rng.standard_normal((2, 20))}, max_entries=15) < 1e-5

    def test_invalid_eps(self, rng):
        params = {"w": parameter(np.ones(2))}
        graph = _graph(lambda b, p: mul(b["x"], p["w"]), params)
        with pytest.raises(ValueError):
            grad_check(graph, {"x": np.ones(2)}, eps=0.0)


class TestExactSplit:
    def test_parts_add_back_to_the_input(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((500, 40)) * 123.456
        seasonal, trend = exact_split(x, moving_average(x, 7, axis=-1))
        assert np.array_equal(seasonal.data + trend.data, x)

    def test_trend_far_above_the_sample_goes_to_seasonal(self):
        x = np.array([1e-20, 0.0, 3.0])
        seasonal, trend = exact_split(x, np.array([1.0, 1.0, 1.0]))
        assert np.array_equal(seasonal.data + trend.data, x)
        assert trend.data[0] == 0.0 and seasonal.data[0] == 1e-20
        assert trend.data[1] == 1.0 and seasonal.data[1] == -1.0
        assert np.array_equal(trend.data[2:], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            exact_split(np.ones((2, 3)), np.ones(3))

    def test_gradient_passes_through(self):
        rng = np.random.default_rng(4)
        params = {"w": parameter(rng.standard_normal((2, 9, 2)))}

        def fn(b, p):
            x = mul(b["x"], p["w"])
            seasonal, trend = exact_split(x, moving_average(x, 3))
            return add(mul(seasonal, seasonal), tanh(trend))

        assert grad_check(_graph(fn, params), {"x": rng.standard_normal((2, 9, 2))}) < 1e-5
