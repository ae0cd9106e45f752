import numpy as np
import pytest

from src.exceptions import ConfigError, InputShapeError, NNetFormatError
from src.network import (ActivationKind, Network, activate, distance_loss, forward, forward_from, gradient,
                         parse_nnet, random_network, serialize_nnet, sgd_step, trace)

ALL_KINDS = [ActivationKind.relu(), ActivationKind.tanh(), ActivationKind.leaky_relu(0.5), ActivationKind.elu(0.5)]


def test_forward_tiny(tiny_net):
    assert forward(tiny_net, [0.2, 0.9]) == pytest.approx([0.2])
    out = forward(tiny_net, np.array([[0.5, 0.5], [1.0, 0.0]]))
    assert out.shape == (2, 1)
    assert out[:, 0] == pytest.approx([-0.5, 0.5])


def test_forward_rejects_wrong_width(tiny_net):
    with pytest.raises(InputShapeError):
        forward(tiny_net, [1.0, 2.0, 3.0])


def test_trace_has_every_layer(tiny_net):
    t = trace(tiny_net, [0.2, 0.9])
    assert len(t) == 3
    assert t.states[0] == pytest.approx([0.2, 0.9])
    assert t.states[1] == pytest.approx([0.0, 0.7])
    assert t.output == pytest.approx(forward(tiny_net, [0.2, 0.9]))


def test_forward_from_matches_forward():
    net = random_network([3, 6, 5, 2], ActivationKind.tanh(), seed=1)
    x = np.random.default_rng(0).uniform(-1, 1, size=(8, 3))
    states = trace(net, x).states
    for layer in range(net.num_layers):
        assert np.allclose(forward_from(net, states[layer], layer), forward(net, x))


def test_activations():
    z = np.array([-2.0, 0.0, 3.0])
    assert activate(ActivationKind.relu(), z) == pytest.approx([0.0, 0.0, 3.0])
    assert activate(ActivationKind.leaky_relu(0.5), z) == pytest.approx([-1.0, 0.0, 3.0])
    assert activate(ActivationKind.elu(0.5), z) == pytest.approx([0.5 * np.expm1(-2.0), 0.0, 3.0])
    assert activate(ActivationKind.tanh(), z) == pytest.approx(np.tanh(z))
    assert activate(ActivationKind.relu(), -1.0) == 0.0


def test_elu_at_minus_one():
    assert activate(ActivationKind.elu(0.5), -1.0) == pytest.approx(-0.31606, abs=1e-5)


def test_tiny_leaky_relu_is_nearly_relu():
    z = np.random.default_rng(3).normal(scale=10.0, size=1000)
    leaky = activate(ActivationKind.leaky_relu(1e-9), z)
    assert np.allclose(leaky, activate(ActivationKind.relu(), z), rtol=0.0, atol=1e-7)
    net = random_network([3, 8, 8, 2], ActivationKind.relu(), seed=2)
    nearly = Network(net.weights, net.biases, ActivationKind.leaky_relu(1e-9))
    x = np.random.default_rng(4).uniform(-1, 1, size=(50, 3))
    assert np.allclose(forward(nearly, x), forward(net, x), rtol=0.0, atol=1e-7)


def test_activation_parse():
    assert ActivationKind.parse('tanh') == ActivationKind.tanh()
    assert ActivationKind.parse('leaky_relu:0.2') == ActivationKind.leaky_relu(0.2)
    assert ActivationKind.parse('ELU') == ActivationKind.elu(0.5)
    assert str(ActivationKind.elu(0.25)) == 'elu:0.25'
    with pytest.raises(ConfigError):
        ActivationKind.parse('sigmoid')
    with pytest.raises(ConfigError):
        ActivationKind('leaky_relu', 0.0)


def test_network_is_immutable(tiny_net):
    with pytest.raises(ValueError):
        tiny_net.weights[0][0, 0] = 5.0


def test_network_rejects_mismatched_layers():
    with pytest.raises(InputShapeError):
        Network((np.ones((3, 2)), np.ones((1, 2))), (np.zeros(3), np.zeros(1)))
    with pytest.raises(InputShapeError):
        Network((np.full((1, 2), np.nan),), (np.zeros(1),))


def test_layer_bookkeeping():
    net = random_network([5, 50, 50, 50, 50, 50, 50, 5], seed=0)
    assert net.num_layers == 8
    assert net.layer_sizes == [5, 50, 50, 50, 50, 50, 50, 5]
    # the ACAS Xu architecture
    assert net.parameter_count == 13305


def _numeric_gradient(net, x, y, k, index, is_bias, eps=1e-6):
    def loss_with(delta):
        weights = [np.array(w) for w in net.weights]
        biases = [np.array(b) for b in net.biases]
        target = biases[k] if is_bias else weights[k]
        target[index] += delta
        return distance_loss(forward(net.with_parameters(weights, biases), x), y)
    return (loss_with(eps) - loss_with(-eps)) / (2 * eps)


def _away_from_kinks(net, x, margin=1e-3):
    """Rows whose hidden pre-activations all stay at least ``margin`` from zero."""
    states = trace(net, x).states
    keep = np.ones(len(x), dtype=bool)
    for k in range(len(net.weights) - 1):
        z = states[k] @ net.weights[k].T + net.biases[k]
        keep &= np.all(np.abs(z) > margin, axis=1)
    return x[keep]


@pytest.mark.parametrize('kind', ALL_KINDS, ids=str)
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(7)
    for trial in range(13):
        net = random_network([3, 4, 4, 2], kind, seed=trial)
        x = _away_from_kinks(net, rng.uniform(-1, 1, size=(200, 3)))[:6]
        assert len(x) == 6
        y = rng.normal(size=(6, 2))
        grad = gradient(net, x, y)
        assert grad.loss == pytest.approx(distance_loss(forward(net, x), y))
        for k in range(len(net.weights)):
            for index in [(0, 0), (net.weights[k].shape[0] - 1, net.weights[k].shape[1] - 1)]:
                numeric = _numeric_gradient(net, x, y, k, index, False)
                assert abs(grad.weights[k][index] - numeric) <= 1e-4 * max(1.0, abs(numeric))
            numeric = _numeric_gradient(net, x, y, k, (0,), True)
            assert abs(grad.biases[k][0] - numeric) <= 1e-4 * max(1.0, abs(numeric))


def test_l1_loss_and_gradient_shape():
    net = random_network([2, 3, 2], seed=3)
    x = np.array([[0.1, 0.2], [0.3, -0.4]])
    y = np.zeros((2, 2))
    grad = gradient(net, x, y, norm=1)
    assert grad.loss == pytest.approx(np.abs(forward(net, x)).sum())
    assert [g.shape for g in grad.weights] == [w.shape for w in net.weights]
    with pytest.raises(ConfigError):
        gradient(net, x, y, norm=3)


def test_sgd_step_reduces_loss():
    net = random_network([2, 8, 1], seed=5)
    x = np.random.default_rng(1).uniform(-1, 1, size=(32, 2))
    y = np.zeros((32, 1))
    before = distance_loss(forward(net, x), y)
    updated = sgd_step(net, gradient(net, x, y), 1e-3)
    assert distance_loss(forward(updated, x), y) < before
    # the original stays untouched
    assert distance_loss(forward(net, x), y) == before


def test_nnet_roundtrip_is_exact():
    net = random_network([3, 5, 2], ActivationKind.elu(0.5), seed=11)
    net = Network(net.weights, net.biases, net.activation, input_bounds=((0, 1), (-1, 1), (2, 3)))
    parsed = parse_nnet(serialize_nnet(net))
    assert parsed.activation == net.activation
    assert parsed.input_bounds == net.input_bounds
    for a, b in zip(parsed.weights + parsed.biases, net.weights + net.biases):
        assert np.array_equal(a, b)


def test_parse_nnet_handwritten():
    text = """// comment
1,2,1,2,
2,1,
0,
0.0,0.0,
1.0,1.0,
0.0,0.0,0.0,
1.0,1.0,1.0,
0.5,-0.25,
1.0,
"""
    net = parse_nnet(text)
    assert net.layer_sizes == [2, 1]
    assert net.activation == ActivationKind.relu()
    assert forward(net, [1.0, 2.0]) == pytest.approx([1.0])


@pytest.mark.parametrize('text', [
    '',
    '1,2,1,2,\n3,1,\n',
    '1,2,1,2,\n2,1,\n0,\n0,0,\n1,1,\n0,0,0,\n1,1,1,\n0.5,abc,\n1.0,\n',
    '1,2,1,2,\n2,1,\n0,\n0,0,\n1,1,\n0,0,0,\n1,1,1,\n0.5,\n',
])
def test_parse_nnet_errors(text):
    with pytest.raises(NNetFormatError):
        parse_nnet(text)
