import numpy as np
import pandas as pd
import pytest

import charts
from experiments import activation_compatibility, alpha_sweep, layer_sweep, neuron_count_sweep
from src.finetuner import FinetuneConfig
from src.localizer import ResponsibilityMatrix
from src.network import ActivationKind
from src.pso import SwarmConfig


@pytest.fixture
def small_cfg():
    return FinetuneConfig(swarm=SwarmConfig(particles=5, max_iters=3), repair_negatives=50, repair_positives=50,
                          test_negatives=50, test_positives=50, localization_samples=300)


def test_alpha_sweep(tiny_net, tiny_spec, small_cfg):
    df = alpha_sweep(tiny_net, [tiny_spec], [0.2, 0.8], small_cfg, seed=1)
    assert list(df['alpha']) == [0.2, 0.8]
    assert list(df['beta']) == pytest.approx([0.8, 0.2])
    assert df['improvement'].between(0, 1).all()


def test_layer_and_neuron_sweeps(tiny_net, tiny_spec, small_cfg):
    layers = layer_sweep(tiny_net, [tiny_spec], 1, small_cfg, seed=2)
    assert list(layers['layer']) == [1, 2]
    counts = neuron_count_sweep(tiny_net, [tiny_spec], 1, [1, 2], small_cfg, seed=2)
    assert list(counts['r']) == [1, 2]
    assert set(counts.columns) >= {'improvement', 'drawdown', 'iterations', 'total_time'}


def test_activation_compatibility(small_cfg):
    df = activation_compatibility((2, 8, 6, 1), 0.1, [ActivationKind.relu(), ActivationKind.tanh()],
                                  small_cfg, seed=3)
    assert list(df['activation']) == ['relu', 'tanh']
    assert df['violation_rate'].between(0.05, 0.15).all()


def test_charts_write_html(tmp_path):
    matrix = ResponsibilityMatrix([np.array([0.1, 0.5, 0.2]), np.array([1.0])])
    heatmap = charts.plot_responsibility(matrix)
    assert len(heatmap.data[0].z) == 2
    charts.save_figure(heatmap, str(tmp_path / 'heat.html'))
    assert 'plotly' in (tmp_path / 'heat.html').read_text()

    history = [{'iteration': i, 'best_fitness': 1.0 / (i + 1), 'mean_fitness': 2.0 / (i + 1)} for i in range(4)]
    assert len(charts.plot_swarm_history(history).data) == 2
    epochs = [{'epoch': i, 'loss': 1.0, 'improvement': 0.5, 'drawdown': 0.0} for i in range(1, 4)]
    assert len(charts.plot_training_history(epochs).data) == 2
    sweep = pd.DataFrame({'alpha': [0.2, 0.8], 'improvement': [0.9, 1.0], 'drawdown': [0.0, 0.01]})
    assert charts.plot_sweep(sweep, 'alpha').layout.title.text == 'Sweep over alpha'
