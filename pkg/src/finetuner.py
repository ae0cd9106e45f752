"""
Finetuner Module

Fine-tuning repair: localize the neurons most responsible for the violations,
then search their incoming weights and biases with a particle swarm while the
rest of the network stays untouched.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.evaluation import (CLASS_RULES, EvaluationSet, RepairReport, build_evaluation_set, evaluate,
                            negative_outcomes, positive_failures)
from src.exceptions import ConfigError, InputShapeError
from src.localizer import MODES, NeuronIndex, ResponsibilityMatrix, localize, select_top
from src.network import Network, forward, forward_from, trace
from src.pso import SwarmConfig, SwarmState, optimize
from src.properties import PropertySpec
from src.sampler import LabeledSampleSet, as_seed_sequence, collect

logger = logging.getLogger(__name__)


@dataclass
class FinetuneConfig:
    """
    Fine-tuning settings.

    ``r`` neurons are repaired, chosen across all layers or only on
    ``layer_filter``. The swarm minimizes ``alpha * unrepaired + beta * drawdown``
    and stops early once the best candidate's drawdown exceeds ``drawdown_abort``.
    """

    r: int = 10
    alpha: float = 0.6
    beta: float = 0.4
    layer_filter: Optional[int] = None
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    drawdown_abort: float = 0.05
    repair_negatives: int = 10000
    repair_positives: int = 10000
    test_negatives: int = 10000
    test_positives: int = 10000
    localization_samples: int = 10000
    mode: str = 'fast'
    normalize: bool = True
    class_rule: Optional[str] = None
    max_draws: Optional[int] = None

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"r must be positive, got {self.r}")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1) or abs(self.alpha + self.beta - 1) > 1e-12:
            raise ConfigError(f"alpha and beta must lie in [0, 1] and sum to 1, got {self.alpha}, {self.beta}")
        if not 0 <= self.drawdown_abort <= 1:
            raise ConfigError(f"drawdown_abort must lie in [0, 1], got {self.drawdown_abort}")
        if min(self.repair_negatives, self.repair_positives, self.test_negatives, self.test_positives,
               self.localization_samples) < 1:
            raise ConfigError("Sample counts must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.class_rule is not None and self.class_rule not in CLASS_RULES:
            raise ConfigError(f"class_rule must be one of {CLASS_RULES}")


class NeuronWeightView:
    """
    The incoming weight rows and biases of selected neurons as one flat vector.

    For each neuron, in the given order: its fan-in weights, then its bias.
    """

    def __init__(self, net: Network, indices: Sequence[NeuronIndex]):
        indices = list(indices)
        if not indices:
            raise InputShapeError("Select at least one neuron")
        if len(set(indices)) != len(indices):
            raise InputShapeError(f"Duplicate neurons in {[i.to_dict() for i in indices]}")
        for index in indices:
            index.check(net)
        self.net = net
        self.indices = indices
        self.offsets = np.cumsum([0] + [net.layer_sizes[i.layer - 1] + 1 for i in indices])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @property
    def earliest_layer(self) -> int:
        return min(i.layer for i in self.indices)

    def extract(self, net: Optional[Network] = None) -> np.ndarray:
        net = net or self.net
        parts = []
        for index in self.indices:
            k = index.layer - 1
            parts.append(net.weights[k][index.neuron])
            parts.append(net.biases[k][index.neuron:index.neuron + 1])
        return np.concatenate(parts).astype(np.float64)

    def write(self, vector: np.ndarray) -> Network:
        """Copy of the network with the selected neurons' parameters taken from ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise InputShapeError(f"Expected a vector of length {self.size}, got shape {vector.shape}")
        weights = list(self.net.weights)
        biases = list(self.net.biases)
        touched = sorted({i.layer - 1 for i in self.indices})
        for k in touched:
            weights[k] = np.array(weights[k])
            biases[k] = np.array(biases[k])
        for index, start, stop in zip(self.indices, self.offsets[:-1], self.offsets[1:]):
            k = index.layer - 1
            weights[k][index.neuron] = vector[start:stop - 1]
            biases[k][index.neuron] = vector[stop - 1]
        return self.net.with_parameters(weights, biases)


def neuron_weight_view(net: Network, indices: Sequence[NeuronIndex]) -> NeuronWeightView:
    return NeuronWeightView(net, indices)


def fitness_from_outputs(negative_outputs: np.ndarray, positive_outputs: np.ndarray,
                         eval_set: EvaluationSet, alpha: float, beta: float) -> float:
    unrepaired = 1.0 - float(negative_outcomes(negative_outputs, eval_set).mean()) \
        if eval_set.num_negatives else 0.0
    broken = float(positive_failures(positive_outputs, eval_set).mean()) if eval_set.num_positives else 0.0
    return alpha * unrepaired + beta * broken


def fitness(candidate: Network, eval_set: EvaluationSet, alpha: float, beta: float) -> float:
    """
    Swarm objective: ``alpha * (share of negatives still violating) + beta * drawdown``.

    Args:
        candidate (Network): Network to score
        eval_set (EvaluationSet): Repair-time negatives and positives
        alpha (float): Weight of the unrepaired share
        beta (float): Weight of the drawdown

    Returns:
        float: Value in [0, alpha + beta]
    """
    neg = forward(candidate, eval_set.negatives) if eval_set.num_negatives else np.empty((0, candidate.output_dim))
    pos = forward(candidate, eval_set.positives) if eval_set.num_positives else np.empty((0, candidate.output_dim))
    return fitness_from_outputs(neg, pos, eval_set, alpha, beta)


class _CachedFitness:
    """
    Fitness over a neuron view that reuses the states below the first modified layer.
    """

    def __init__(self, view: NeuronWeightView, eval_set: EvaluationSet, alpha: float, beta: float):
        self.view = view
        self.eval_set = eval_set
        self.alpha = alpha
        self.beta = beta
        self.start = view.earliest_layer - 1
        self.neg_states = self._states(eval_set.negatives)
        self.pos_states = self._states(eval_set.positives)

    def _states(self, points: np.ndarray) -> np.ndarray:
        if len(points) == 0:
            return points
        return trace(self.view.net, points).states[self.start]

    def outputs(self, net: Network) -> Tuple[np.ndarray, np.ndarray]:
        empty = np.empty((0, net.output_dim))
        neg = forward_from(net, self.neg_states, self.start) if len(self.neg_states) else empty
        pos = forward_from(net, self.pos_states, self.start) if len(self.pos_states) else empty
        return neg, pos

    def __call__(self, vector: np.ndarray) -> float:
        neg, pos = self.outputs(self.view.write(vector))
        return fitness_from_outputs(neg, pos, self.eval_set, self.alpha, self.beta)

    def drawdown(self, vector: np.ndarray) -> float:
        if not len(self.pos_states):
            return 0.0
        _, pos = self.outputs(self.view.write(vector))
        return float(positive_failures(pos, self.eval_set).mean())


def _repair_eval_set(net: Network, specs: Sequence[PropertySpec], sample_sets: Sequence[LabeledSampleSet],
                     cfg: FinetuneConfig, seed, threads: int) -> EvaluationSet:
    """Repair-time set; falls back to neighbourhood positives when the pre box has none."""
    eval_set = build_evaluation_set(net, specs, cfg.repair_negatives, cfg.repair_positives, seed,
                                    threads, cfg.max_draws)
    short = [i for i in range(len(specs)) if not np.any(eval_set.positive_spec == i)]
    if short:
        by_id = {s.spec_id: s for s in sample_sets}
        positives = [eval_set.positives[eval_set.positive_spec == i] if i not in short
                     else by_id[specs[i].id].positives[:cfg.repair_positives] for i in range(len(specs))]
        negatives = [eval_set.negatives[eval_set.negative_spec == i] for i in range(len(specs))]
        for i in short:
            logger.info(f"Property {specs[i].id}: no positives in the pre box, "
                        f"using neighbourhood positives for drawdown")
        eval_set = EvaluationSet.from_arrays(specs, negatives, positives)
    if cfg.class_rule is not None:
        eval_set = replace(eval_set, class_rule=cfg.class_rule).with_reference_labels(net)
    return eval_set


def fine_tune(net: Network, specs: Sequence[PropertySpec], cfg: Optional[FinetuneConfig] = None,
              seed: int = 42, threads: int = 1) -> Tuple[Network, RepairReport]:
    """
    Repair a network by fine-tuning its most responsible neurons.

    Samples every property, accumulates responsibility over the violated
    ones, selects the top ``r`` neurons (on one layer in layer-wise mode) and
    lets a particle swarm search their incoming weights and biases. Only those
    parameters differ in the returned network.

    Args:
        net (Network): Network to repair
        specs: Properties that must hold
        cfg (Optional[FinetuneConfig]): Settings, defaults when omitted
        seed (int): Seed for sampling and the swarm
        threads (int): Worker threads for sampling and fitness evaluation

    Returns:
        Tuple of the repaired network and its report on fresh test sets

    Raises:
        PositivesUnavailable: A violated property has no positive samples nearby
    """
    cfg = cfg or FinetuneConfig()
    start = time.perf_counter()
    collect_seed, repair_seed, test_seed, swarm_seed = as_seed_sequence(seed).spawn(4)

    sample_sets: List[LabeledSampleSet] = []
    for spec, child in zip(specs, collect_seed.spawn(len(specs))):
        sample_sets.append(collect(net, spec, cfg.localization_samples, min_positives=1, seed=child,
                                   threads=threads))
    violated_sets = [s for s in sample_sets if s.has_negatives]
    if not violated_sets:
        logger.info("No property is violated under sampling, returning the network unchanged")
        return net, RepairReport(mode='finetune', improvement=1.0, drawdown=0.0, nothing_to_repair=True,
                                 seed=seed, config=asdict(cfg), total_time=time.perf_counter() - start)
    violated_ids = {s.spec_id for s in violated_sets}
    violated = [s for s in specs if s.id in violated_ids]

    loc_start = time.perf_counter()
    matrix: ResponsibilityMatrix = localize(net, violated_sets, cfg.mode, cfg.normalize, threads)
    selection = select_top(matrix, cfg.r, cfg.layer_filter)
    localization_time = time.perf_counter() - loc_start
    logger.info(f"Selected {len(selection)} neurons in {localization_time:.3f}s: "
                f"{[(n.layer, n.neuron) for n in selection]}")

    eval_set = _repair_eval_set(net, violated, violated_sets, cfg, repair_seed, threads)
    view = NeuronWeightView(net, selection.neurons)
    objective = _CachedFitness(view, eval_set, cfg.alpha, cfg.beta)

    initial = view.extract()
    accepted = {'position': initial.copy()}

    def guard(state: SwarmState) -> bool:
        if np.array_equal(state.global_best, accepted['position']):
            return False
        if objective.drawdown(state.global_best) > cfg.drawdown_abort:
            logger.warning(f"Drawdown of the best candidate exceeds {cfg.drawdown_abort}, stopping the swarm")
            return True
        accepted['position'] = state.global_best.copy()
        return False

    swarm_cfg = replace(cfg.swarm, seed=int(swarm_seed.generate_state(1)[0]),
                        target_fitness=0.0 if cfg.swarm.target_fitness is None else cfg.swarm.target_fitness)
    result = optimize(objective, view.size, initial, swarm_cfg, callback=guard, threads=threads)
    best = result.position
    if result.stop_reason == 'callback' or objective.drawdown(best) > cfg.drawdown_abort:
        best = accepted['position']
    repaired = view.write(best)

    positive_rates = []
    for s in violated_sets:
        in_pre = int(s.positive_in_pre.sum())
        positive_rates.append(in_pre / (in_pre + s.num_negatives))
    test_set = build_evaluation_set(net, violated, cfg.test_negatives, cfg.test_positives, test_seed,
                                    threads, cfg.max_draws)
    if cfg.class_rule is not None:
        test_set = replace(test_set, class_rule=cfg.class_rule).with_reference_labels(net)
    report = evaluate(net, repaired, test_set, 'finetune', positive_rate=float(np.mean(positive_rates)))
    report.localization_time = localization_time
    report.repaired_neurons = [n.to_dict() for n in selection]
    report.iterations = result.iterations
    report.history = result.history
    report.seed = seed
    report.config = asdict(cfg)
    report.delta_used = {s.spec_id: s.delta_used for s in violated_sets}
    if selection.truncated:
        report.notes.append(f"only {len(selection)} neurons available, {cfg.r} requested")
    report.notes.append(f"swarm stopped: {result.stop_reason}")
    report.total_time = time.perf_counter() - start
    logger.info(f"Fine-tuning repair finished in {report.total_time:.3f}s")
    return repaired, report
