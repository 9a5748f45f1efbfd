import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import conv_scalar, distortion_scalar, finite_difference_grads, net_scalar
from conftest import random_net
from tquant.model import (Network, ShapeError, WeightTensor, conv_forward, forward_from, layer_inputs,
                          layer_output_gradients, network_forward, output_distortion, top1_agreement)


def test_scalar_multiply():
    out = conv_forward(WeightTensor([[2.0]]), np.array([[[[3.0]]]]))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 6.0


def test_identity_layer():
    x = np.random.default_rng(0).standard_normal((3, 4, 2, 2))
    assert np.array_equal(conv_forward(WeightTensor(np.eye(4)), x), x)


def test_hand_convolution():
    layer = WeightTensor(np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2))
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    assert np.array_equal(conv_forward(layer, x)[0, 0], [[6.0, 8.0], [12.0, 14.0]])


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 2), st.integers(0, 2), st.integers(0, 10_000))
def test_conv_matches_scalar_reference(n, m, a, b, dh, dw, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((n, m, a, b))
    bias = rng.standard_normal(n)
    x = rng.standard_normal((2, m, a + dh, b + dw))
    got = conv_forward(WeightTensor(theta, bias, "conv"), x)
    np.testing.assert_allclose(got, conv_scalar(theta, x, bias), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors_name_the_layer():
    layer = WeightTensor(np.ones((2, 3, 2, 2)), name="c1")
    with pytest.raises(ShapeError) as exc:
        conv_forward(layer, np.ones((1, 4, 3, 3)))
    assert exc.value.layer == "c1" and exc.value.expected == 3 and exc.value.actual == 4
    with pytest.raises(ShapeError) as exc:
        conv_forward(layer, np.ones((1, 3, 1, 3)))
    assert exc.value.expected == (2, 2) and exc.value.actual == (1, 3)


def test_weight_tensor_invariants():
    with pytest.raises(ValueError):
        WeightTensor(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        WeightTensor(np.ones((2, 2)), bias=[np.inf, 0])
    with pytest.raises(ShapeError):
        WeightTensor(np.ones((0, 2, 1, 1)))
    with pytest.raises(ShapeError):
        WeightTensor(np.ones((2, 2, 3, 3)), kind="dense")
    with pytest.raises(ShapeError):
        WeightTensor(np.ones((2, 2)), bias=[1.0])
    w = WeightTensor(np.ones((2, 3)))
    assert w.shape == (2, 3, 1, 1) and w.kind == "dense" and np.array_equal(w.bias, [0.0, 0.0])
    assert w.size == 6 and (w.n, w.m, w.a, w.b) == (2, 3, 1, 1)
    with pytest.raises(ValueError):
        w.data[0, 0, 0, 0] = 5.0


def test_network_validation():
    a = WeightTensor(np.ones((3, 2, 2, 2)))
    b = WeightTensor(np.ones((4, 3, 2, 2)))
    net = Network.chain([a, b], (2, 3, 3))
    assert net.activations == ("relu", "identity")
    assert net.shapes() == [(2, 3, 3), (3, 2, 2), (4, 1, 1)]
    assert net.output_size == 4 and net.weight_count == a.size + b.size
    with pytest.raises(ShapeError):
        Network.chain([a, WeightTensor(np.ones((4, 2, 1, 1)))], (2, 3, 3))
    with pytest.raises(ShapeError):
        Network.chain([a, b], (2, 2, 2))
    with pytest.raises(ValueError):
        Network((a, b), ("relu", "relu"), (2, 3, 3))
    with pytest.raises(ShapeError):
        net.replace(0, WeightTensor(np.ones((3, 2, 1, 1))))


def test_single_layer_forward_is_theta_x():
    rng = np.random.default_rng(1)
    theta = rng.standard_normal((3, 4))
    x = rng.standard_normal((5, 4, 1, 1))
    net = Network.chain([WeightTensor(theta)], (4, 1, 1))
    np.testing.assert_allclose(network_forward(net, x)[:, :, 0, 0], x[:, :, 0, 0] @ theta.T, rtol=1e-13)


def test_two_linear_layers_compose():
    rng = np.random.default_rng(2)
    t1, t2 = rng.standard_normal((5, 4)), rng.standard_normal((3, 5))
    net = Network((WeightTensor(t1), WeightTensor(t2)), ("identity", "identity"), (4, 1, 1))
    x = rng.standard_normal((6, 4, 1, 1))
    single = Network.chain([WeightTensor(t2 @ t1)], (4, 1, 1))
    np.testing.assert_allclose(network_forward(net, x), network_forward(single, x), rtol=1e-12, atol=1e-12)


def test_relu_net_matches_scalar_reference():
    net = random_net(seed=3)
    x = np.random.default_rng(3).standard_normal((3,) + net.input_shape)
    ref = net_scalar([(l.data, l.bias) for l in net.layers], net.activations, x)
    np.testing.assert_allclose(network_forward(net, x), ref, rtol=1e-12, atol=1e-12)


def test_layer_inputs_and_forward_from(small_net, small_calib):
    acts = layer_inputs(small_net, small_calib)
    assert len(acts) == len(small_net.layers) + 1
    np.testing.assert_array_equal(acts[-1], network_forward(small_net, small_calib))
    for i in range(len(small_net.layers)):
        np.testing.assert_array_equal(forward_from(small_net, i, acts[i]), acts[-1])


def test_linear_gradient_is_broadcast_input():
    rng = np.random.default_rng(4)
    theta = rng.standard_normal((3, 4))
    x = rng.standard_normal((2, 4, 1, 1))
    net = Network.chain([WeightTensor(theta)], (4, 1, 1))
    g = layer_output_gradients(net, 0, x)
    assert g.exact and g.weight == 1.0 and g.values.shape == (2, 3, 3, 4, 1, 1)
    for s in range(2):
        for i in range(3):
            expect = np.zeros((3, 4))
            expect[i] = x[s, :, 0, 0]
            np.testing.assert_array_equal(g.values[s, i, :, :, 0, 0], expect)


def test_dead_units_have_zero_gradient():
    first = WeightTensor(-np.ones((3, 2)), bias=-np.ones(3))
    second = WeightTensor(np.ones((2, 3)))
    net = Network.chain([first, second], (2, 1, 1))
    x = np.abs(np.random.default_rng(5).standard_normal((4, 2, 1, 1)))
    assert not np.any(layer_output_gradients(net, 0, x).values)
    assert not np.any(layer_output_gradients(net, 1, x).values)


def _net_fd(net, idx, x):
    layer = net.layers[idx]

    def forward(theta):
        return network_forward(net.replace(idx, layer.with_data(theta)), x)

    return finite_difference_grads(forward, np.array(layer.data))


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_gradients_match_finite_differences(idx):
    net = random_net(seed=11, arch=((3, 2, 2), (4, 2, 2), (3, 1, 1)), input_shape=(2, 3, 3))
    assert net.layers[2].kind == "dense"
    x = np.random.default_rng(12).standard_normal((3,) + net.input_shape)
    got = layer_output_gradients(net, idx, x).values
    fd = _net_fd(net, idx, x)
    rel = np.max(np.abs(got.reshape(fd.shape) - fd)) / np.max(np.abs(fd))
    assert rel <= 1e-4


def test_random_probes_are_weighted_exact_gradients(small_net, small_calib):
    exact = layer_output_gradients(small_net, 1, small_calib).values
    rng = np.random.default_rng(9)
    probe = layer_output_gradients(small_net, 1, small_calib, probes=5, rng=rng)
    v = np.random.default_rng(9).standard_normal((len(small_calib), 5) + small_net.output_shape)
    expect = np.einsum("cpo,co...->cp...", v.reshape(len(small_calib), 5, -1), exact)
    assert not probe.exact and probe.weight == pytest.approx(0.2)
    np.testing.assert_allclose(probe.values, expect, rtol=1e-10, atol=1e-12)


def test_large_outputs_switch_to_probes():
    layer = WeightTensor(np.ones((300, 1)))
    net = Network.chain([layer], (1, 1, 1))
    g = layer_output_gradients(net, 0, np.ones((1, 1, 1, 1)))
    assert not g.exact and g.values.shape[1] == 64


def test_gradient_index_error(small_net, small_calib):
    with pytest.raises(IndexError):
        layer_output_gradients(small_net, 3, small_calib)


def test_output_distortion_examples(small_net, small_calib):
    assert output_distortion(small_net, small_net, small_calib) == 0.0
    base = Network.chain([WeightTensor([[1.5]])], (1, 1, 1))
    pert = Network.chain([WeightTensor([[1.5 + 0.25]])], (1, 1, 1))
    assert output_distortion(base, pert, np.ones((1, 1, 1, 1))) == pytest.approx(0.0625, rel=1e-15)
    with pytest.raises(ValueError):
        output_distortion(small_net, small_net, np.zeros((0,) + small_net.input_shape))


def test_output_distortion_matches_reference(small_net, small_calib):
    layers = [l.with_data(np.round(np.array(l.data) * 4) / 4) for l in small_net.layers]
    qnet = small_net.with_layers(layers)
    ref = distortion_scalar(net_scalar([(l.data, l.bias) for l in small_net.layers], small_net.activations, small_calib),
                            net_scalar([(l.data, l.bias) for l in layers], small_net.activations, small_calib))
    assert output_distortion(small_net, qnet, small_calib) == pytest.approx(ref, rel=1e-10)
    assert ref > 0


@given(st.floats(-8, 8, allow_nan=False).filter(lambda a: abs(a) > 1e-3), st.integers(0, 1000))
def test_linearity(alpha, seed):
    rng = np.random.default_rng(seed)
    layer = WeightTensor(rng.standard_normal((3, 2, 2, 2)))
    x = rng.standard_normal((2, 2, 4, 3))
    np.testing.assert_allclose(conv_forward(layer.scaled(alpha), x), alpha * conv_forward(layer, x),
                               rtol=1e-12, atol=1e-12 * abs(alpha))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_adjoint(n, m, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((n, m))
    x = rng.standard_normal((1, m, 3, 2))
    z = rng.standard_normal((1, n, 3, 2))
    lhs = np.sum(conv_forward(WeightTensor(theta), x) * z)
    rhs = np.sum(x * conv_forward(WeightTensor(theta.T), z))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_determinism(small_net, small_calib):
    a = network_forward(small_net, small_calib)
    b = network_forward(small_net, small_calib)
    assert a.tobytes() == b.tobytes()
    g1 = layer_output_gradients(small_net, 0, small_calib).values
    g2 = layer_output_gradients(small_net, 0, small_calib).values
    assert g1.tobytes() == g2.tobytes()


def test_top1_agreement():
    y = np.array([[1.0, 2.0], [3.0, 0.0]])
    assert top1_agreement(y, y) == 1.0
    assert top1_agreement(y, y[:, ::-1]) == 0.0
