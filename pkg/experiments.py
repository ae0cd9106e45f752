"""
Experiments Module

Parameter sweeps over the fine-tuning repair: the fitness weight, the number
of repaired neurons, the repaired layer, and the hidden activation. Each
sweep returns one DataFrame row per run.
"""

import logging
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence

import pandas as pd

from src.evaluation import RepairReport
from src.finetuner import FinetuneConfig, fine_tune
from src.network import ActivationKind, Network
from src.properties import PropertySpec
from src.synthetic import PlantedBugSpec, make_buggy

logger = logging.getLogger(__name__)

SWEEPS = ('alpha', 'neurons', 'layers', 'activations')


def _row(report: RepairReport, **params) -> dict:
    row = dict(params)
    row.update({
        'improvement': report.improvement,
        'drawdown': report.drawdown,
        'iterations': report.iterations,
        'localization_time': round(report.localization_time, 3),
        'total_time': round(report.total_time, 3),
        'nothing_to_repair': report.nothing_to_repair,
    })
    return row


def alpha_sweep(net: Network, specs: Sequence[PropertySpec], alphas: Iterable[float],
                base_cfg: Optional[FinetuneConfig] = None, seed: int = 42, threads: int = 1) -> pd.DataFrame:
    """
    Cross-layer fine-tuning once per fitness weight, with ``beta = 1 - alpha``.

    Args:
        net (Network): Network to repair
        specs: Properties
        alphas: Weights of the unrepaired share
        base_cfg (Optional[FinetuneConfig]): Settings shared by all runs
        seed (int): Seed shared by all runs
        threads (int): Worker threads

    Returns:
        pd.DataFrame: One row per alpha
    """
    base_cfg = base_cfg or FinetuneConfig()
    rows = []
    for alpha in alphas:
        cfg = replace(base_cfg, alpha=float(alpha), beta=1.0 - float(alpha), layer_filter=None)
        logger.info(f"Alpha sweep: alpha={alpha:g}")
        _, report = fine_tune(net, specs, cfg, seed, threads)
        rows.append(_row(report, alpha=float(alpha), beta=cfg.beta))
    return pd.DataFrame(rows)


def neuron_count_sweep(net: Network, specs: Sequence[PropertySpec], layer: int, counts: Iterable[int],
                       base_cfg: Optional[FinetuneConfig] = None, seed: int = 42,
                       threads: int = 1) -> pd.DataFrame:
    """Layer-wise fine-tuning on ``layer`` with each neuron count in ``counts``."""
    base_cfg = base_cfg or FinetuneConfig()
    rows = []
    for r in counts:
        cfg = replace(base_cfg, r=int(r), layer_filter=layer)
        logger.info(f"Neuron count sweep: layer {layer}, r={r}")
        _, report = fine_tune(net, specs, cfg, seed, threads)
        rows.append(_row(report, layer=layer, r=int(r)))
    return pd.DataFrame(rows)


def layer_sweep(net: Network, specs: Sequence[PropertySpec], r: int = 5,
                base_cfg: Optional[FinetuneConfig] = None, seed: int = 42, threads: int = 1) -> pd.DataFrame:
    """Layer-wise fine-tuning of ``r`` neurons on every non-input layer in turn."""
    base_cfg = base_cfg or FinetuneConfig()
    rows = []
    for layer in range(1, net.num_layers):
        cfg = replace(base_cfg, r=r, layer_filter=layer)
        logger.info(f"Layer sweep: layer {layer}, r={r}")
        _, report = fine_tune(net, specs, cfg, seed, threads)
        rows.append(_row(report, layer=layer, r=r))
    return pd.DataFrame(rows)


def activation_compatibility(topology: Sequence[int] = (5, 50, 50, 5), rate: float = 0.1,
                             activations: Optional[List[ActivationKind]] = None,
                             cfg: Optional[FinetuneConfig] = None, seed: int = 42,
                             threads: int = 1) -> pd.DataFrame:
    """
    Plant a bug in one network per activation and fine-tune each.

    Args:
        topology: Layer sizes of the planted networks
        rate (float): Target violation rate
        activations: Activations to try, all four supported kinds by default
        cfg (Optional[FinetuneConfig]): Fine-tuning settings
        seed (int): Seed for fixtures and repair
        threads (int): Worker threads

    Returns:
        pd.DataFrame: One row per activation with the planted violation rate
    """
    activations = activations or [ActivationKind.relu(), ActivationKind.tanh(),
                                  ActivationKind.leaky_relu(0.5), ActivationKind.elu(0.5)]
    cfg = cfg or FinetuneConfig()
    rows = []
    for kind in activations:
        net, spec, oracle = make_buggy(PlantedBugSpec(tuple(topology), kind, rate, seed=seed))
        logger.info(f"Activation sweep: {kind}, planted rate {oracle.achieved_rate:.4f}")
        _, report = fine_tune(net, [spec], cfg, seed, threads)
        rows.append(_row(report, activation=str(kind), violation_rate=oracle.achieved_rate))
    return pd.DataFrame(rows)
