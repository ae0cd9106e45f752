import numpy as np
import pytest

from src.exceptions import ConfigError
from src.network import ActivationKind, forward
from src.properties import InputDomain, SampleClass, classify_batch
from src.sampler import sample_uniform
from src.synthetic import BugOracle, PlantedBugSpec, activation_fixtures, make_buggy, place_bug_region

SQUARE_BUG = InputDomain((0.4, 0.4), (0.6, 0.6))


def _agreement(net, spec, oracle, count=5000, seed=99):
    points = sample_uniform(spec.pre, count, seed)
    negative = classify_batch(net, spec, points) == SampleClass.NEGATIVE
    return float(np.mean(negative == oracle(points)))


def test_two_dimensional_construction():
    net, spec, oracle = make_buggy(PlantedBugSpec(topology=(2, 8, 1), bug_region=SQUARE_BUG, check_samples=20000))
    assert forward(net, [0.5, 0.5])[0] > 0
    assert forward(net, [0.1, 0.9])[0] <= 0
    assert oracle.achieved_rate == pytest.approx(0.04, abs=0.006)
    assert _agreement(net, spec, oracle) >= 0.99


def test_measured_rate_matches_oracle_rate():
    net, spec, oracle = make_buggy(PlantedBugSpec(topology=(2, 8, 6, 1), bug_region=SQUARE_BUG))
    points = sample_uniform(spec.pre, 10000, 5)
    measured = float(np.mean(~spec.post.satisfied(forward(net, points))))
    assert measured == pytest.approx(float(np.mean(oracle(points))), abs=0.01)


def test_default_fixture():
    net, spec, oracle = make_buggy(PlantedBugSpec())
    assert net.layer_sizes == [5, 50, 50, 5]
    assert spec.id == 'planted'
    assert oracle.region.issubset(spec.pre)
    assert oracle.achieved_rate == pytest.approx(0.1, abs=0.02)
    assert _agreement(net, spec, oracle) >= 0.99


def test_same_seed_same_network():
    a, _, _ = make_buggy(PlantedBugSpec(seed=3))
    b, _, _ = make_buggy(PlantedBugSpec(seed=3))
    c, _, _ = make_buggy(PlantedBugSpec(seed=4))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert not all(np.array_equal(x, y) for x, y in zip(a.weights, c.weights))


def test_every_activation_plants_the_bug():
    fixtures = activation_fixtures((5, 40, 30, 5), rate=0.1, seed=1)
    names = [net.activation.name for net, _, _ in fixtures]
    assert names == ['relu', 'tanh', 'leaky_relu', 'elu']
    for net, spec, oracle in fixtures:
        assert oracle.achieved_rate == pytest.approx(0.1, abs=0.03), str(net.activation)
        assert _agreement(net, spec, oracle) >= 0.97, str(net.activation)


def test_place_bug_region_volume():
    pre = InputDomain((0.0, -1.0, 0.0), (1.0, 1.0, 2.0))
    region = place_bug_region(pre, 0.2, np.random.default_rng(0))
    assert region.issubset(pre)
    assert np.prod(region.widths) / np.prod(pre.widths) == pytest.approx(0.2)


def test_oracle_is_box_membership():
    oracle = BugOracle(SQUARE_BUG)
    assert list(oracle(np.array([[0.5, 0.5], [0.7, 0.5]]))) == [True, False]


@pytest.mark.parametrize('kwargs', [
    {'topology': (5, 5)},
    {'topology': (5, 10, 5)},
    {'rate': 0.0},
    {'safe_output': 7},
    {'activation': ActivationKind.leaky_relu(1.5)},
    {'bug_region': InputDomain((0.5,) * 5, (1.5,) * 5)},
    {'pre': InputDomain.unit(3)},
])
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        PlantedBugSpec(**kwargs)
