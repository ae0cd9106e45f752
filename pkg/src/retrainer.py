"""
Retrainer Module

Retraining-style repair. Negative outputs are replaced by outputs imitated
from nearby positive outputs, and the network is retrained on the corrected
samples while a preservation set keeps the original behavior in place.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.evaluation import EvaluationSet, RepairReport, build_evaluation_set, drawdown, evaluate, improvement
from src.exceptions import ConfigError, CorrectionImpossible, DivergenceError, InputShapeError
from src.network import Gradient, Network, distance_loss, forward, gradient, sgd_step
from src.properties import InputDomain, OutputCondition, PropertySpec
from src.sampler import (LabeledSampleSet, SeedLike, as_seed_sequence, collect, rebalance,
                         sample_uniform)

logger = logging.getLogger(__name__)

# rows of the negatives x positives distance matrix computed at once
_DISTANCE_BLOCK = 2_000_000


class Provenance(str, Enum):
    ORIGINAL_POSITIVE = 'original_positive'
    CORRECTED_NEGATIVE = 'corrected_negative'
    PRESERVATION_SAMPLE = 'preservation_sample'


@dataclass
class RepairDataset:
    """Input/target pairs with where each pair came from."""

    inputs: np.ndarray
    targets: np.ndarray
    provenance: np.ndarray
    spec_ids: np.ndarray = None

    def __post_init__(self):
        if not (len(self.inputs) == len(self.targets) == len(self.provenance)):
            raise InputShapeError("inputs, targets and provenance must have the same length")
        if self.spec_ids is None:
            self.spec_ids = np.full(len(self.inputs), '', dtype=object)

    def __len__(self) -> int:
        return len(self.inputs)

    def count(self, provenance: Provenance) -> int:
        return int(np.sum(self.provenance == provenance.value))

    @classmethod
    def concat(cls, parts: Sequence['RepairDataset']) -> 'RepairDataset':
        parts = [p for p in parts if len(p)]
        if not parts:
            raise InputShapeError("Nothing to concatenate")
        return cls(np.vstack([p.inputs for p in parts]), np.vstack([p.targets for p in parts]),
                   np.concatenate([p.provenance for p in parts]), np.concatenate([p.spec_ids for p in parts]))


@dataclass
class RetrainConfig:
    """
    Retraining settings.

    ``norm`` selects the loss distance (2: squared Euclidean, 1: absolute),
    ``distance_norm`` the metric used to find neighbouring positive outputs.
    The sample sizes drive the end-to-end :func:`retrain_repair` pipeline.
    ``seed`` orders the mini-batches in :func:`retrain`; :func:`retrain_repair`
    sets it from its own ``seed`` argument.
    """

    alpha: float = 0.5
    beta: float = 0.5
    k: int = 5
    norm: int = 2
    distance_norm: int = 2
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    early_stop_window: int = 10
    seed: int = 42
    train_samples: int = 10000
    test_samples: int = 5000
    negative_fraction: float = 0.1
    preservation_samples: int = 10000

    def __post_init__(self):
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1) or abs(self.alpha + self.beta - 1) > 1e-12:
            raise ConfigError(f"alpha and beta must lie in [0, 1] and sum to 1, got {self.alpha}, {self.beta}")
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.norm not in (1, 2) or self.distance_norm not in (1, 2):
            raise ConfigError("norm and distance_norm must be 1 or 2")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_window < 1:
            raise ConfigError("learning_rate, batch_size, max_epochs and early_stop_window must be positive")
        if not 0 <= self.negative_fraction <= 1:
            raise ConfigError(f"negative_fraction must lie in [0, 1], got {self.negative_fraction}")


def _distances(queries: np.ndarray, references: np.ndarray, norm: int) -> np.ndarray:
    diff = queries[:, None, :] - references[None, :, :]
    if norm == 1:
        return np.abs(diff).sum(axis=2)
    return np.sqrt((diff * diff).sum(axis=2))


def negative_correct(positive_outputs: np.ndarray, negative_outputs: np.ndarray, k: int,
                     post: OutputCondition, distance_norm: int = 2) -> np.ndarray:
    """
    Give every negative output a corrected label imitated from positive outputs.

    The candidate label is the mean of the ``k`` positive outputs closest to
    the negative one (ties broken by lower index). When that mean violates
    ``post`` the single closest positive output is used instead, so every
    label satisfies ``post`` as long as the positive outputs do.

    Args:
        positive_outputs (np.ndarray): Outputs of positive samples (Np, n)
        negative_outputs (np.ndarray): Outputs of negative samples (Nn, n)
        k (int): Neighbours to average, capped at Np
        post (OutputCondition): Post-condition the labels must satisfy
        distance_norm (int): 2 for Euclidean, 1 for Manhattan distance

    Returns:
        np.ndarray: Corrected labels (Nn, n)

    Raises:
        CorrectionImpossible: No positive outputs, or some violate ``post``
    """
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    positive_outputs = np.asarray(positive_outputs, dtype=np.float64).reshape(-1, post.output_dim)
    negative_outputs = np.asarray(negative_outputs, dtype=np.float64).reshape(-1, post.output_dim)
    if len(positive_outputs) == 0:
        raise CorrectionImpossible("No positive outputs to imitate")
    if not post.satisfied(positive_outputs).all():
        raise CorrectionImpossible("Some positive outputs violate the post-condition")
    if len(negative_outputs) == 0:
        return negative_outputs.copy()

    neighbours = min(k, len(positive_outputs))
    block = max(1, _DISTANCE_BLOCK // len(positive_outputs))
    corrected = np.empty_like(negative_outputs)
    for start in range(0, len(negative_outputs), block):
        chunk = negative_outputs[start:start + block]
        order = np.argsort(_distances(chunk, positive_outputs, distance_norm), axis=1, kind='stable')
        candidates = positive_outputs[order[:, :neighbours]].mean(axis=1)
        nearest = positive_outputs[order[:, 0]]
        ok = post.satisfied(candidates)
        corrected[start:start + block] = np.where(ok[:, None], candidates, nearest)
    return corrected


def build_repair_dataset(collections: Sequence[LabeledSampleSet], k: int,
                         specs: Sequence[PropertySpec], distance_norm: int = 2) -> RepairDataset:
    """
    Repair dataset from per-property sample sets.

    Positives keep their own outputs as targets, negatives get corrected labels.
    """
    by_id: Dict[str, PropertySpec] = {s.id: s for s in specs}
    parts = []
    for sample_set in collections:
        if sample_set.spec_id not in by_id:
            raise InputShapeError(f"No property with id {sample_set.spec_id!r}")
        spec = by_id[sample_set.spec_id]
        if sample_set.num_positives == 0:
            raise CorrectionImpossible(f"Property {spec.id}: no positive samples to imitate")
        labels = negative_correct(sample_set.positive_outputs, sample_set.negative_outputs, k,
                                  spec.post, distance_norm)
        inputs = np.vstack([sample_set.positives, sample_set.negatives.reshape(-1, spec.pre.dim)])
        targets = np.vstack([sample_set.positive_outputs, labels])
        provenance = np.array([Provenance.ORIGINAL_POSITIVE.value] * sample_set.num_positives
                              + [Provenance.CORRECTED_NEGATIVE.value] * sample_set.num_negatives, dtype=object)
        parts.append(RepairDataset(inputs, targets, provenance, np.full(len(inputs), spec.id, dtype=object)))
        logger.info(f"Property {spec.id}: {sample_set.num_negatives} corrected negatives, "
                    f"{sample_set.num_positives} positives")
    return RepairDataset.concat(parts)


def make_preservation_set(net: Network, specs: Sequence[PropertySpec], count: int, seed: SeedLike,
                          domain: Optional[InputDomain] = None) -> RepairDataset:
    """
    Self-labelled preservation data ``(x, net(x))``.

    Points are drawn from ``domain`` (default: the network's input bounds, else
    the bounding box of all pre boxes) and kept unless they are negative for
    some property.
    """
    if domain is None:
        if net.input_bounds is not None:
            domain = InputDomain.from_bounds(net.input_bounds)
        else:
            domain = InputDomain(tuple(np.min([s.pre.lower for s in specs], axis=0)),
                                 tuple(np.max([s.pre.upper for s in specs], axis=0)))
    points = sample_uniform(domain, count, seed)
    outputs = forward(net, points)
    keep = np.ones(count, dtype=bool)
    for spec in specs:
        inside = spec.pre.contains(points)
        keep &= ~(inside & ~spec.post.satisfied(outputs))
    provenance = np.full(int(keep.sum()), Provenance.PRESERVATION_SAMPLE.value, dtype=object)
    return RepairDataset(points[keep], outputs[keep], provenance)


def loss_drp(net: Network, d_re: RepairDataset, norm: int = 2) -> float:
    """Summed distance between the network's outputs and the repair targets."""
    if len(d_re) == 0:
        raise InputShapeError("Repair dataset is empty")
    return distance_loss(forward(net, d_re.inputs), d_re.targets, norm)


def loss_mpr(net: Network, d: RepairDataset, norm: int = 2) -> float:
    """Summed distance between the network's outputs and the preservation targets."""
    if len(d) == 0:
        return 0.0
    return distance_loss(forward(net, d.inputs), d.targets, norm)


def total_loss(net: Network, d: RepairDataset, d_re: RepairDataset, alpha: float, beta: float,
               norm: int = 2) -> float:
    return alpha * loss_drp(net, d_re, norm) + beta * loss_mpr(net, d, norm)


def combined_gradient(net: Network, repair_batch: Tuple[np.ndarray, np.ndarray],
                      preserve_batch: Optional[Tuple[np.ndarray, np.ndarray]],
                      alpha: float, beta: float, norm: int = 2) -> Gradient:
    """
    Gradient of ``alpha * L_repair + beta * L_preserve`` for one batch of each.

    Each term is averaged over its batch so the step size does not grow with
    the batch size. A term with weight 0 is skipped.
    """
    total = gradient(net, repair_batch[0], repair_batch[1], norm) * (alpha / len(repair_batch[0]))
    if beta > 0 and preserve_batch is not None and len(preserve_batch[0]):
        total = total + gradient(net, preserve_batch[0], preserve_batch[1], norm) * (beta / len(preserve_batch[0]))
    return total


class EarlyStopping:
    """
    Stop once improvement has stayed unchanged for ``patience`` epochs.
    """

    def __init__(self, patience: int = 10, tolerance: float = 1e-6):
        self.patience = patience
        self.tolerance = tolerance
        self.counter = 0
        self.last = None

    def __call__(self, value: float) -> bool:
        if self.last is not None and abs(value - self.last) <= self.tolerance:
            self.counter += 1
        else:
            self.counter = 0
        self.last = value
        return self.counter >= self.patience


def retrain(net: Network, d: RepairDataset, d_re: RepairDataset, cfg: RetrainConfig,
            eval_set: EvaluationSet) -> Tuple[Network, RepairReport]:
    """
    Retrain under the weighted repair/preservation loss.

    Starts from ``net``'s weights and runs mini-batch gradient descent on
    ``alpha * L_DRP + beta * L_MPR``. Each step draws one batch from the repair
    set and one from the preservation set. Training stops when every evaluation
    negative is repaired, when improvement stays unchanged for the early-stop
    window, or at ``max_epochs``.

    Args:
        net (Network): Network to repair
        d (RepairDataset): Preservation dataset, may be empty
        d_re (RepairDataset): Repair dataset
        cfg (RetrainConfig): Settings
        eval_set (EvaluationSet): Points the stopping rule and checkpoint choice are measured on

    Returns:
        Tuple of the best-improvement network and its report

    Raises:
        DivergenceError: The loss or gradient became non-finite
    """
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    report = RepairReport(mode='retrain', config=asdict(cfg), seed=cfg.seed)

    initial = loss_drp(net, d_re, cfg.norm)
    best_net, best_u, best_v = net, improvement(net, eval_set), drawdown(net, eval_set)
    if initial == 0.0:
        logger.info("Repair loss is already 0, nothing to retrain")
        report.improvement, report.drawdown = best_u, best_v
        report.total_time = time.perf_counter() - start
        return net, report

    stopper = EarlyStopping(cfg.early_stop_window)
    steps = math.ceil(max(len(d_re), len(d)) / cfg.batch_size)
    current = net
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order_re = rng.permutation(len(d_re))
        order_d = rng.permutation(len(d)) if len(d) else None
        for step in range(steps):
            window = np.arange(step * cfg.batch_size, (step + 1) * cfg.batch_size)
            idx = order_re[window % len(d_re)]
            preserve = None
            if order_d is not None:
                pidx = order_d[window % len(d)]
                preserve = (d.inputs[pidx], d.targets[pidx])
            grad = combined_gradient(current, (d_re.inputs[idx], d_re.targets[idx]), preserve,
                                     cfg.alpha, cfg.beta, cfg.norm)
            if not grad.is_finite():
                raise DivergenceError(f"Non-finite gradient at epoch {epoch}, step {step}; "
                                      f"try a smaller learning rate than {cfg.learning_rate}")
            current = sgd_step(current, grad, cfg.learning_rate)

        loss = total_loss(current, d, d_re, cfg.alpha, cfg.beta, cfg.norm)
        if not math.isfinite(loss):
            raise DivergenceError(f"Loss became non-finite at epoch {epoch}")
        u, v = improvement(current, eval_set), drawdown(current, eval_set)
        report.history.append({'epoch': epoch, 'loss': loss, 'improvement': u, 'drawdown': v})
        logger.info(f"Epoch {epoch}: loss={loss:.6g} improvement={u:.4f} drawdown={v:.4f}")
        if u > best_u + 1e-12 or (abs(u - best_u) <= 1e-12 and v < best_v):
            best_net, best_u, best_v = current, u, v
        if u >= 1.0:
            logger.info(f"All evaluation negatives repaired after {epoch} epochs")
            break
        if stopper(u):
            logger.info(f"Improvement unchanged for {cfg.early_stop_window} epochs, stopping at epoch {epoch}")
            break

    report.improvement, report.drawdown = best_u, best_v
    report.iterations = epoch
    report.total_time = time.perf_counter() - start
    return best_net, report


def retrain_repair(net: Network, specs: Sequence[PropertySpec], cfg: Optional[RetrainConfig] = None,
                   seed: int = 42, threads: int = 1) -> Tuple[Network, RepairReport]:
    """
    End-to-end retraining repair.

    Collects samples for every violated property, builds the repair and
    preservation datasets with the configured negative/positive proportions,
    retrains, and reports on a fresh held-out test set.

    Args:
        net (Network): Network to repair
        specs: Properties that must hold
        cfg (Optional[RetrainConfig]): Settings, defaults when omitted
        seed (int): Seed for all sampling and shuffling, replaces ``cfg.seed``
        threads (int): Worker threads for sampling

    Returns:
        Tuple of the repaired network and the test-set report
    """
    cfg = replace(cfg or RetrainConfig(), seed=seed)
    start = time.perf_counter()
    collect_seed, preserve_seed, balance_seed, test_seed = as_seed_sequence(seed).spawn(4)

    collections: List[LabeledSampleSet] = []
    positive_rates: List[float] = []
    for spec, child in zip(specs, collect_seed.spawn(len(specs))):
        sample_set = collect(net, spec, cfg.train_samples, min_positives=cfg.k, seed=child, threads=threads)
        if sample_set.has_negatives:
            in_pre = int(sample_set.positive_in_pre.sum())
            positive_rates.append(in_pre / (in_pre + sample_set.num_negatives))
            collections.append(sample_set)

    if not collections:
        logger.info("No property is violated under sampling, returning the network unchanged")
        return net, RepairReport(mode='retrain', improvement=1.0, drawdown=0.0, accuracy=1.0,
                                 nothing_to_repair=True, seed=seed, config=asdict(cfg),
                                 total_time=time.perf_counter() - start)

    violated = [s for s in specs if s.id in {c.spec_id for c in collections}]
    per_spec = max(1, cfg.train_samples // len(collections))
    balanced = [rebalance(c, cfg.negative_fraction, per_spec, child)
                for c, child in zip(collections, balance_seed.spawn(len(collections)))]
    d_re = build_repair_dataset(balanced, cfg.k, violated, cfg.distance_norm)
    d = make_preservation_set(net, specs, cfg.preservation_samples, preserve_seed)

    train_eval = EvaluationSet.from_arrays(
        violated,
        [c.negatives for c in collections],
        [c.in_pre_positives() for c in collections])
    repaired, train_report = retrain(net, d, d_re, cfg, train_eval)

    n_neg = max(1, int(round(cfg.test_samples * cfg.negative_fraction)))
    test_set = build_evaluation_set(net, violated, n_neg, max(0, cfg.test_samples - n_neg), test_seed, threads)
    report = evaluate(net, repaired, test_set, 'retrain', positive_rate=float(np.mean(positive_rates)))
    report.iterations = train_report.iterations
    report.history = train_report.history
    report.seed = seed
    report.config = asdict(cfg)
    report.delta_used = {c.spec_id: c.delta_used for c in collections}
    report.notes.extend(note for c in balanced for note in c.notes)
    report.total_time = time.perf_counter() - start
    logger.info(f"Retraining repair finished in {report.total_time:.3f}s")
    return repaired, report
