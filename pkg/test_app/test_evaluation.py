import json

import numpy as np
import pytest

from src.evaluation import (EvaluationSet, RepairReport, accuracy, build_evaluation_set, drawdown, evaluate,
                            improvement)
from src.exceptions import ConfigError, InputShapeError
from src.network import Network
from src.properties import InputDomain, OutputCondition, PropertySpec


def _shifted(net: Network, bias: float) -> Network:
    return net.with_parameters(net.weights, [net.biases[0], np.array([bias])])


@pytest.fixture
def eval_set(tiny_spec):
    negatives = np.array([[1.0, 0.0], [0.0, 0.9], [0.9, 0.1]])
    positives = np.array([[0.5, 0.5], [0.2, 0.3], [0.0, 0.4], [0.6, 0.5]])
    return EvaluationSet.from_arrays([tiny_spec], [negatives], [positives])


def test_metrics_on_original(tiny_net, eval_set):
    assert improvement(tiny_net, eval_set) == 0.0
    assert drawdown(tiny_net, eval_set) == 0.0
    assert accuracy(tiny_net, eval_set) == pytest.approx(4 / 7)


def test_metrics_after_shift(tiny_net, eval_set):
    # y = |x0 - x1| - 0.9 repairs |d| <= 0.9
    shifted = _shifted(tiny_net, -0.9)
    assert improvement(shifted, eval_set) == pytest.approx(2 / 3)
    assert drawdown(shifted, eval_set) == 0.0
    # y = |x0 - x1| breaks every positive with x0 != x1
    broken = _shifted(tiny_net, 0.0)
    assert drawdown(broken, eval_set) == pytest.approx(0.75)


def test_empty_sets_are_neutral(tiny_net, tiny_spec):
    empty = EvaluationSet.from_arrays([tiny_spec], [np.empty((0, 2))], [np.empty((0, 2))])
    assert improvement(tiny_net, empty) == 1.0
    assert drawdown(tiny_net, empty) == 0.0
    assert accuracy(tiny_net, empty) == 1.0


def test_reference_labels_turn_drawdown_into_accuracy_drop():
    net = Network((np.array([[1.0, 0.0], [0.0, 1.0]]),), (np.zeros(2),))
    spec = PropertySpec('any', InputDomain.unit(2), OutputCondition.upper_bound(0, 10.0, 2))
    base = EvaluationSet.from_arrays([spec], [np.empty((0, 2))], [np.array([[0.9, 0.1], [0.1, 0.9]])])
    labelled = base.with_reference_labels(net)
    assert list(labelled.positive_labels) == [0, 1]
    swapped = Network((np.array([[0.0, 1.0], [1.0, 0.0]]),), (np.zeros(2),))
    assert drawdown(swapped, base) == 0.0
    assert drawdown(swapped, labelled) == 1.0


def test_evaluation_set_validation(tiny_spec):
    with pytest.raises(InputShapeError):
        EvaluationSet([tiny_spec], np.zeros((2, 2)), np.zeros(1, dtype=int), np.zeros((0, 2)), np.zeros(0, dtype=int))
    with pytest.raises(ConfigError):
        EvaluationSet([tiny_spec], np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2)),
                      np.zeros(0, dtype=int), class_rule='median')


def test_from_arrays_tags_specs(tiny_spec):
    other = PropertySpec('other', tiny_spec.pre, tiny_spec.post)
    eval_set = EvaluationSet.from_arrays([tiny_spec, other], [np.zeros((2, 2)), np.ones((3, 2))],
                                         [np.zeros((1, 2)), np.zeros((0, 2))])
    assert list(eval_set.negative_spec) == [0, 0, 1, 1, 1]
    assert list(eval_set.positive_spec) == [0]


def test_build_evaluation_set(tiny_net, tiny_spec):
    eval_set = build_evaluation_set(tiny_net, [tiny_spec], 50, 150, seed=8)
    assert eval_set.num_negatives == 50
    assert eval_set.num_positives == 150
    assert improvement(tiny_net, eval_set) == 0.0
    assert drawdown(tiny_net, eval_set) == 0.0


def test_evaluate_fills_report(tiny_net, eval_set):
    report = evaluate(tiny_net, _shifted(tiny_net, -0.9), eval_set, 'finetune', positive_rate=0.75)
    assert report.mode == 'finetune'
    assert report.improvement == pytest.approx(2 / 3)
    assert report.satisfaction_probability == pytest.approx(0.75 + 0.25 * 2 / 3)
    assert report.accuracy == pytest.approx(6 / 7)


def test_report_json_roundtrip():
    report = RepairReport(mode='retrain', improvement=np.float64(0.5), drawdown=0.01,
                          repaired_neurons=[{'layer': 1, 'neuron': 3}], localization_time=1.23456,
                          history=[{'epoch': 1, 'loss': 2.0}], notes=['x'])
    doc = json.loads(report.to_json())
    assert doc['schema_version'] == 1
    assert doc['localization_time'] == 1.235
    restored = RepairReport.from_json(report.to_json())
    assert restored.improvement == 0.5
    assert restored.repaired_neurons == [{'layer': 1, 'neuron': 3}]
    assert RepairReport.from_dict(dict(doc, unknown=1)).notes == ['x']
