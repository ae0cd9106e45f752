import numpy as np
import pytest

from src.exceptions import ConfigError, InputShapeError
from src.localizer import (NeuronIndex, ResponsibilityMatrix, localize, responsibility, responsibility_exact,
                           responsibility_fast, select_top)
from src.network import ActivationKind, Network, random_network, trace
from src.properties import InputDomain, OutputCondition, PropertySpec
from src.sampler import LabeledSampleSet, collect


def _brute_force(net, positives, negatives):
    rows = []
    for layer in range(1, net.num_layers):
        scores = np.zeros(net.layer_sizes[layer])
        for xn in negatives:
            for xp in positives:
                scores += np.abs(trace(net, xn).states[layer] - trace(net, xp).states[layer])
        rows.append(scores)
    return rows


def test_exact_matches_brute_force_and_bounds_fast():
    rng = np.random.default_rng(0)
    kinds = [ActivationKind.relu(), ActivationKind.tanh(), ActivationKind.leaky_relu(0.5), ActivationKind.elu(0.5)]
    for trial in range(100):
        net = random_network([3, 5, 4, 2], kinds[trial % 4], seed=trial)
        positives = rng.uniform(-1, 1, size=(int(rng.integers(1, 8)), 3))
        negatives = rng.uniform(-1, 1, size=(int(rng.integers(1, 8)), 3))
        exact = responsibility_exact(net, positives, negatives)
        for got, want in zip(exact.rows, _brute_force(net, positives, negatives)):
            assert np.allclose(got, want, rtol=1e-9, atol=1e-12)
        for normalize in (True, False):
            fast = responsibility_fast(net, positives, negatives, normalize=normalize)
            for f, e in zip(fast.rows, exact.rows):
                assert np.all(f <= e + 1e-9)


def test_fast_equals_exact_for_single_samples():
    net = random_network([2, 3, 2], seed=4)
    p, n = np.array([[0.1, 0.2]]), np.array([[0.7, -0.3]])
    assert responsibility_fast(net, p, n) == responsibility_exact(net, p, n)


def test_fast_normalizes_unequal_sets():
    net = random_network([2, 3, 2], seed=4)
    p = np.array([[0.1, 0.2], [0.1, 0.2]])
    n = np.array([[0.7, -0.3]])
    # duplicating a positive changes nothing once sums become means
    assert responsibility_fast(net, p, n) == responsibility_fast(net, p[:1], n)
    assert responsibility_fast(net, p, n, normalize=False) != responsibility_fast(net, p[:1], n)


def test_identical_sets_score_zero():
    net = random_network([2, 4, 2], seed=1)
    x = np.random.default_rng(2).uniform(size=(5, 2))
    for mode in ('fast', 'exact'):
        matrix = responsibility(net, x, x.copy(), mode)
        if mode == 'fast':
            assert all(np.allclose(row, 0.0) for row in matrix.rows)
        assert matrix.layer_sizes == [4, 2]


def test_responsibility_errors():
    net = random_network([2, 3, 1], seed=0)
    with pytest.raises(InputShapeError):
        responsibility_fast(net, np.empty((0, 2)), np.ones((1, 2)))
    with pytest.raises(ConfigError):
        responsibility(net, np.ones((1, 2)), np.ones((1, 2)), mode='slow')


def test_threads_do_not_change_scores():
    net = random_network([3, 6, 2], seed=3)
    rng = np.random.default_rng(5)
    p, n = rng.uniform(size=(9000, 3)), rng.uniform(size=(5000, 3))
    assert responsibility_fast(net, p, n, threads=1) == responsibility_fast(net, p, n, threads=4)


def test_localize_skips_satisfied_properties(tiny_net, tiny_spec):
    safe = PropertySpec('safe', InputDomain((0.4, 0.4), (0.6, 0.6)), tiny_spec.post)
    sets = [collect(tiny_net, s, 500, seed=i) for i, s in enumerate([tiny_spec, safe])]
    matrix = localize(tiny_net, sets)
    assert matrix == responsibility_fast(tiny_net, sets[0].positives, sets[0].negatives)
    assert localize(tiny_net, sets[1:]) == ResponsibilityMatrix.zeros(tiny_net)


def test_matrix_validation_and_algebra():
    with pytest.raises(InputShapeError):
        ResponsibilityMatrix([np.array([1.0, -1.0])])
    with pytest.raises(InputShapeError):
        ResponsibilityMatrix([])
    a = ResponsibilityMatrix([np.array([1.0, 2.0]), np.array([3.0])])
    assert (a + a).layer(1) == pytest.approx([2.0, 4.0])
    with pytest.raises(InputShapeError):
        a + ResponsibilityMatrix([np.array([1.0])])
    with pytest.raises(InputShapeError):
        a.layer(0)


def test_matrix_frame_roundtrip():
    matrix = ResponsibilityMatrix([np.array([0.5, 0.0, 2.0]), np.array([1.5])])
    frame = matrix.to_frame()
    assert list(frame.columns) == ['layer', 'neuron', 'score']
    assert list(frame['layer']) == [1, 1, 1, 2]
    assert ResponsibilityMatrix.from_frame(frame.sample(frac=1.0, random_state=0)) == matrix


def test_select_top_orders_and_breaks_ties():
    matrix = ResponsibilityMatrix([np.array([1.0, 3.0, 3.0]), np.array([3.0, 0.5])])
    selection = select_top(matrix, 3)
    assert selection.neurons == [NeuronIndex(1, 1), NeuronIndex(1, 2), NeuronIndex(2, 0)]
    assert selection.scores == [3.0, 3.0, 3.0]
    assert not selection.truncated
    layer_two = select_top(matrix, 5, layer_filter=2)
    assert list(layer_two) == [NeuronIndex(2, 0), NeuronIndex(2, 1)]
    assert layer_two.truncated
    with pytest.raises(ConfigError):
        select_top(matrix, 0)
    with pytest.raises(ConfigError):
        select_top(matrix, 1, layer_filter=3)


def test_neuron_index_check(tiny_net):
    NeuronIndex(2, 0).check(tiny_net)
    with pytest.raises(InputShapeError):
        NeuronIndex(0, 0).check(tiny_net)
    with pytest.raises(InputShapeError):
        NeuronIndex(1, 2).check(tiny_net)


def test_planted_carrier_is_most_responsible():
    post = OutputCondition.upper_bound(0, 0.0, 1)
    spec = PropertySpec('half', InputDomain.unit(1), post)
    # neuron 0 separates the halves of the box, neuron 1 is constant
    net = Network((np.array([[10.0], [0.0]]), np.array([[1.0, 1.0]])), (np.array([-5.0, 1.0]), np.array([-1.0])))
    sample_set = collect(net, spec, 1000, seed=0)
    top = select_top(localize(net, [sample_set]), 1)
    assert top.neurons in ([NeuronIndex(1, 0)], [NeuronIndex(2, 0)])
    assert select_top(localize(net, [sample_set]), 1, layer_filter=1).neurons == [NeuronIndex(1, 0)]


def _scaled_layer(net, k, c):
    weights = [np.array(w) for w in net.weights]
    biases = [np.array(b) for b in net.biases]
    weights[k] *= c
    biases[k] *= c
    return net.with_parameters(weights, biases)


@pytest.mark.parametrize('score', [responsibility_exact, responsibility_fast], ids=['exact', 'fast'])
def test_scores_scale_with_layer_states(score):
    rng = np.random.default_rng(11)
    for trial in range(20):
        net = random_network([3, 5, 4, 2], seed=trial)
        positives = rng.uniform(-1, 1, size=(int(rng.integers(1, 9)), 3))
        negatives = rng.uniform(-1, 1, size=(int(rng.integers(1, 9)), 3))
        base = score(net, positives, negatives)
        # relu is positively homogeneous, so the first hidden states scale by c
        c = float(rng.uniform(0.5, 3.0))
        hidden = score(_scaled_layer(net, 0, c), positives, negatives)
        assert np.allclose(hidden.layer(1), c * base.layer(1), rtol=1e-9, atol=1e-12)
        assert select_top(hidden, 3, layer_filter=1).neurons == select_top(base, 3, layer_filter=1).neurons
        # the output layer is affine, so any sign works
        c = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 3.0))
        output = score(_scaled_layer(net, 2, c), positives, negatives)
        assert np.allclose(output.layer(3), abs(c) * base.layer(3), rtol=1e-9, atol=1e-12)
        assert np.allclose(output.layer(1), base.layer(1), rtol=1e-12, atol=0.0)


@pytest.mark.parametrize('score', [responsibility_exact, responsibility_fast], ids=['exact', 'fast'])
def test_scores_ignore_sample_order(score):
    rng = np.random.default_rng(12)
    kinds = [ActivationKind.relu(), ActivationKind.tanh(), ActivationKind.leaky_relu(0.5), ActivationKind.elu(0.5)]
    for trial in range(20):
        net = random_network([3, 6, 4, 2], kinds[trial % 4], seed=trial)
        positives = rng.uniform(-1, 1, size=(int(rng.integers(1, 30)), 3))
        negatives = rng.uniform(-1, 1, size=(int(rng.integers(1, 30)), 3))
        base = score(net, positives, negatives)
        shuffled = score(net, rng.permutation(positives), rng.permutation(negatives))
        for a, b in zip(base.rows, shuffled.rows):
            assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_single_layer_selection_matches_layer_filter():
    rng = np.random.default_rng(13)
    for trial in range(50):
        rows = [rng.uniform(0, 1, size=6), rng.uniform(0, 1, size=4), rng.uniform(0, 1, size=2)]
        layer = int(rng.integers(1, 4))
        r = int(rng.integers(1, len(rows[layer - 1]) + 1))
        # lift one layer above every other score so the global top-r lands on it
        rows[layer - 1] = rows[layer - 1] + 2.0
        matrix = ResponsibilityMatrix(rows)
        cross = select_top(matrix, r)
        assert {n.layer for n in cross} == {layer}
        assert cross.neurons == select_top(matrix, r, layer_filter=layer).neurons


def _sample_set(name, positives, negatives):
    return LabeledSampleSet(name, InputDomain.unit(2), positives, np.zeros((len(positives), 1)),
                            negatives, np.zeros((len(negatives), 1)))


def test_localize_puts_equal_sized_sets_on_the_mean_scale():
    net = random_network([2, 5, 3, 1], seed=6)
    rng = np.random.default_rng(7)
    equal = _sample_set('equal', rng.uniform(size=(40, 2)), rng.uniform(size=(40, 2)))
    uneven = _sample_set('uneven', rng.uniform(size=(30, 2)), rng.uniform(size=(10, 2)))
    sums = responsibility_fast(net, equal.positives, equal.negatives)
    means = responsibility_fast(net, uneven.positives, uneven.negatives)
    total = localize(net, [equal, uneven])
    for got, s, m in zip(total.rows, sums.rows, means.rows):
        assert np.allclose(got, s / 40 + m, rtol=1e-12)
    raw = localize(net, [equal, uneven], normalize=False)
    for got, s, m in zip(raw.rows, sums.rows,
                         responsibility_fast(net, uneven.positives, uneven.negatives, normalize=False).rows):
        assert np.allclose(got, s + m, rtol=1e-12)
    exact = localize(net, [equal], mode='exact')
    assert exact == responsibility_exact(net, equal.positives, equal.negatives)
