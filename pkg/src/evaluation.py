"""
Evaluation Module

Evaluation sets, the improvement/drawdown/accuracy metrics, and the repair
report written after every run.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.exceptions import ConfigError, InputShapeError
from src.network import Network, forward
from src.properties import PropertySpec
from src.sampler import SeedLike, as_seed_sequence, draw_polarized, satisfaction_probability

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CLASS_RULES = ('argmax', 'argmin')


@dataclass
class EvaluationSet:
    """
    Fixed negatives and positives to measure a repair on.

    Each point carries the index of the property it was drawn for. When
    ``positive_labels`` is set, drawdown becomes the share of positives whose
    predicted class (``class_rule`` applied to the output) differs from the
    label, i.e. an accuracy drop.
    """

    specs: List[PropertySpec]
    negatives: np.ndarray
    negative_spec: np.ndarray
    positives: np.ndarray
    positive_spec: np.ndarray
    positive_labels: Optional[np.ndarray] = None
    class_rule: str = 'argmax'

    def __post_init__(self):
        if len(self.negatives) != len(self.negative_spec) or len(self.positives) != len(self.positive_spec):
            raise InputShapeError("Every evaluation point needs a property index")
        if self.positive_labels is not None and len(self.positive_labels) != len(self.positives):
            raise InputShapeError("positive_labels must match the positives")
        if self.class_rule not in CLASS_RULES:
            raise ConfigError(f"class_rule must be one of {CLASS_RULES}")

    @property
    def num_negatives(self) -> int:
        return len(self.negatives)

    @property
    def num_positives(self) -> int:
        return len(self.positives)

    def with_reference_labels(self, net: Network) -> 'EvaluationSet':
        """Copy whose positives are labelled with ``net``'s predicted classes."""
        labels = _classes(forward(net, self.positives), self.class_rule) if self.num_positives else np.empty(0, int)
        return EvaluationSet(self.specs, self.negatives, self.negative_spec, self.positives,
                             self.positive_spec, labels, self.class_rule)

    @classmethod
    def from_arrays(cls, specs: Sequence[PropertySpec], negatives: Sequence[np.ndarray],
                    positives: Sequence[np.ndarray]) -> 'EvaluationSet':
        """Stack per-property point batches, tagging each point with its property index."""
        specs = list(specs)
        dim = specs[0].pre.dim if specs else 0

        def stack(batches):
            batches = [np.asarray(b, dtype=np.float64).reshape(-1, dim) for b in batches]
            points = np.vstack(batches) if batches else np.empty((0, dim))
            index = np.concatenate([np.full(len(b), i, dtype=int) for i, b in enumerate(batches)]) \
                if batches else np.empty(0, dtype=int)
            return points, index

        neg, neg_spec = stack(negatives)
        pos, pos_spec = stack(positives)
        return cls(specs, neg, neg_spec, pos, pos_spec)


def _classes(outputs: np.ndarray, rule: str) -> np.ndarray:
    return np.argmax(outputs, axis=1) if rule == 'argmax' else np.argmin(outputs, axis=1)


def _satisfied(outputs: np.ndarray, spec_index: np.ndarray, specs: Sequence[PropertySpec]) -> np.ndarray:
    ok = np.zeros(len(outputs), dtype=bool)
    for i, spec in enumerate(specs):
        mask = spec_index == i
        if mask.any():
            ok[mask] = spec.post.satisfied(outputs[mask])
    return ok


def negative_outcomes(negative_outputs: np.ndarray, eval_set: EvaluationSet) -> np.ndarray:
    """Mask of negatives whose outputs now satisfy their property."""
    return _satisfied(negative_outputs, eval_set.negative_spec, eval_set.specs)


def positive_failures(positive_outputs: np.ndarray, eval_set: EvaluationSet) -> np.ndarray:
    """Mask of positives that lost their original behavior."""
    if eval_set.positive_labels is not None:
        return _classes(positive_outputs, eval_set.class_rule) != eval_set.positive_labels
    return ~_satisfied(positive_outputs, eval_set.positive_spec, eval_set.specs)


def improvement(net: Network, eval_set: EvaluationSet) -> float:
    """Share of evaluation negatives that satisfy their property under ``net``."""
    if eval_set.num_negatives == 0:
        return 1.0
    return float(negative_outcomes(forward(net, eval_set.negatives), eval_set).mean())


def drawdown(net: Network, eval_set: EvaluationSet) -> float:
    """Share of evaluation positives that lost their original behavior under ``net``."""
    if eval_set.num_positives == 0:
        return 0.0
    return float(positive_failures(forward(net, eval_set.positives), eval_set).mean())


def accuracy(net: Network, eval_set: EvaluationSet) -> float:
    """Share of all evaluation points, negatives and positives, that behave as required."""
    total = eval_set.num_negatives + eval_set.num_positives
    if total == 0:
        return 1.0
    good = improvement(net, eval_set) * eval_set.num_negatives \
        + (1.0 - drawdown(net, eval_set)) * eval_set.num_positives
    return float(good / total)


def build_evaluation_set(net: Network, specs: Sequence[PropertySpec], n_negatives: int,
                         n_positives: int, seed: SeedLike, threads: int = 1,
                         max_draws: Optional[int] = None) -> EvaluationSet:
    """
    Draw fresh negatives and positives for every property.

    Args:
        net (Network): Network the polarity is measured on (the original one)
        specs: Properties
        n_negatives (int): Negatives per property
        n_positives (int): Positives per property
        seed: Seed, use a different one than the repair-time sets
        threads (int): Worker threads
        max_draws (Optional[int]): Draw budget per property

    Returns:
        EvaluationSet: Points tagged with their property index
    """
    negatives, positives = [], []
    children = as_seed_sequence(seed).spawn(len(specs))
    for spec, child in zip(specs, children):
        neg, pos = draw_polarized(net, spec, n_negatives, n_positives, child, max_draws, threads)
        negatives.append(neg)
        positives.append(pos)
    return EvaluationSet.from_arrays(specs, negatives, positives)


@dataclass
class RepairReport:
    """
    Outcome of one repair run.

    ``improvement`` is the share of evaluation negatives now satisfying their
    property and ``drawdown`` the share of evaluation positives now violating
    (or misclassified, for labelled tasks).
    """

    mode: str
    improvement: float = 0.0
    drawdown: float = 0.0
    accuracy: Optional[float] = None
    localization_time: float = 0.0
    total_time: float = 0.0
    repaired_neurons: List[Dict[str, int]] = field(default_factory=list)
    iterations: int = 0
    seed: Optional[int] = None
    config: Dict[str, Any] = field(default_factory=dict)
    delta_used: Dict[str, float] = field(default_factory=dict)
    satisfaction_probability: Optional[float] = None
    nothing_to_repair: bool = False
    notes: List[str] = field(default_factory=list)
    history: List[Dict[str, float]] = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['localization_time'] = round(self.localization_time, 3)
        doc['total_time'] = round(self.total_time, 3)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=json_default)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'RepairReport':
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> 'RepairReport':
        return cls.from_dict(json.loads(text))


def json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def evaluate(net_before: Network, net_after: Network, eval_set: EvaluationSet, mode: str,
             positive_rate: Optional[float] = None) -> RepairReport:
    """
    Measure a repair on held-out points.

    Args:
        net_before (Network): Original network
        net_after (Network): Repaired network
        eval_set (EvaluationSet): Held-out points drawn with a fresh seed
        mode (str): ``retrain`` or ``finetune``
        positive_rate (Optional[float]): Sampled share of positives before repair,
            enables the satisfaction probability field

    Returns:
        RepairReport: Report with metrics filled; timings are left to the caller
    """
    u = improvement(net_after, eval_set)
    v = drawdown(net_after, eval_set)
    report = RepairReport(mode=mode, improvement=u, drawdown=v, accuracy=accuracy(net_after, eval_set))
    if positive_rate is not None:
        report.satisfaction_probability = satisfaction_probability(positive_rate, u, v)
    before = improvement(net_before, eval_set)
    if before > 0:
        report.notes.append(f"{before:.3f} of evaluation negatives already satisfied before repair")
    logger.info(f"Evaluation: improvement={u:.4f} drawdown={v:.4f} accuracy={report.accuracy:.4f}")
    return report
