"""
Sampler Module

Monte Carlo characterization of network behavior over property domains:
uniform sampling, positive/negative partitioning, domain neighbourhood
relaxation when positives are missing, and the sampling bounds behind the
probabilistic repair statement.

Randomness always flows from a single integer seed through
``np.random.SeedSequence.spawn``, one child stream per batch, so results do not
depend on how batches are scheduled across threads.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.exceptions import ConfigError, InputShapeError, PositivesUnavailable
from src.network import Network, forward
from src.properties import InputDomain, PropertySpec, delta_neighbourhood
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]

BATCH_SIZE = 4096
# fixed so the drawn points do not depend on the thread count
BATCHES_PER_ROUND = 4


@dataclass
class LabeledSampleSet:
    """
    Positive and negative samples of one property with their recorded outputs.

    Positives found in a domain neighbourhood lie outside the pre box; they
    are marked by ``positive_in_pre`` and only serve as imitation targets and
    localization references.
    """

    spec_id: str
    domain: InputDomain
    positives: np.ndarray
    positive_outputs: np.ndarray
    negatives: np.ndarray
    negative_outputs: np.ndarray
    positive_in_pre: np.ndarray = None
    delta_used: float = 0.0
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.positives) != len(self.positive_outputs) or len(self.negatives) != len(self.negative_outputs):
            raise InputShapeError("Sample and output counts differ")
        if self.positive_in_pre is None:
            self.positive_in_pre = np.ones(len(self.positives), dtype=bool)

    @property
    def num_positives(self) -> int:
        return len(self.positives)

    @property
    def num_negatives(self) -> int:
        return len(self.negatives)

    @property
    def has_negatives(self) -> bool:
        return len(self.negatives) > 0

    def in_pre_positives(self) -> np.ndarray:
        return self.positives[self.positive_in_pre]

    def to_frame(self) -> pd.DataFrame:
        """One row per point: inputs, outputs, polarity, spec id."""
        m = self.domain.dim
        inputs = np.vstack([self.positives.reshape(-1, m), self.negatives.reshape(-1, m)])
        n = self.positive_outputs.shape[1] if self.num_positives else self.negative_outputs.shape[1]
        outputs = np.vstack([self.positive_outputs.reshape(-1, n), self.negative_outputs.reshape(-1, n)])
        frame = pd.DataFrame(inputs, columns=[f'x{i}' for i in range(m)])
        for j in range(n):
            frame[f'y{j}'] = outputs[:, j]
        polarity = (['positive' if flag else 'positive_neighbourhood' for flag in self.positive_in_pre]
                    + ['negative'] * self.num_negatives)
        frame['polarity'] = polarity
        frame['spec_id'] = self.spec_id
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, domain: InputDomain, delta_used: float = 0.0) -> 'LabeledSampleSet':
        xs = [c for c in frame.columns if c.startswith('x')]
        ys = [c for c in frame.columns if c.startswith('y')]
        if len(xs) != domain.dim or not ys:
            raise InputShapeError(f"Sample table has {len(xs)} input columns, domain has {domain.dim}")
        is_neg = (frame['polarity'] == 'negative').to_numpy()
        spec_ids = frame['spec_id'].unique()
        return cls(
            spec_id=str(spec_ids[0]) if len(spec_ids) else '',
            domain=domain,
            positives=frame.loc[~is_neg, xs].to_numpy(dtype=np.float64),
            positive_outputs=frame.loc[~is_neg, ys].to_numpy(dtype=np.float64),
            negatives=frame.loc[is_neg, xs].to_numpy(dtype=np.float64),
            negative_outputs=frame.loc[is_neg, ys].to_numpy(dtype=np.float64),
            positive_in_pre=(frame.loc[~is_neg, 'polarity'] == 'positive').to_numpy(),
            delta_used=delta_used,
        )


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def sample_uniform(domain: InputDomain, count: int, seed: SeedLike = 0) -> np.ndarray:
    """
    Draw i.i.d. uniform points from a box.

    Args:
        domain (InputDomain): Box to sample
        count (int): Number of points
        seed: Integer seed or seed sequence

    Returns:
        np.ndarray: Points of shape (count, m); degenerate dimensions are constant
    """
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}")
    rng = np.random.default_rng(as_seed_sequence(seed))
    return rng.uniform(np.asarray(domain.lower), np.asarray(domain.upper), size=(count, domain.dim))


def _batched(domain: InputDomain, count: int, seed: SeedLike) -> List[Tuple[InputDomain, int, np.random.SeedSequence]]:
    sizes = [BATCH_SIZE] * (count // BATCH_SIZE)
    if count % BATCH_SIZE:
        sizes.append(count % BATCH_SIZE)
    children = as_seed_sequence(seed).spawn(len(sizes))
    return [(domain, size, child) for size, child in zip(sizes, children)]


def _evaluate_batches(net: Network, spec: PropertySpec, jobs, threads: int):
    def run(job):
        domain, size, child = job
        points = sample_uniform(domain, size, child)
        outputs = forward(net, points)
        return points, outputs, spec.post.satisfied(outputs)

    results = ordered_map(run, jobs, threads)
    points = np.vstack([r[0] for r in results])
    outputs = np.vstack([r[1] for r in results])
    satisfied = np.concatenate([r[2] for r in results])
    return points, outputs, satisfied


def draw_points(net: Network, spec: PropertySpec, domain: InputDomain, count: int,
                seed: SeedLike, threads: int = 1) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Sample a box and evaluate the property's post-condition on every point.

    Returns:
        Tuple of points (N, m), outputs (N, n), satisfied mask (N,)
    """
    return _evaluate_batches(net, spec, _batched(domain, count, seed), threads)


def default_delta_schedule(domain: InputDomain, steps: int = 12) -> List[float]:
    """``[0, d0, 2 d0, 4 d0, ...]`` with ``d0`` one percent of the widest box edge."""
    widest = float(np.max(domain.widths))
    base = 0.01 * widest if widest > 0 else 0.01
    return [0.0] + [base * 2 ** k for k in range(steps)]


def _check_schedule(schedule: Sequence[float]):
    if not schedule or schedule[0] != 0:
        raise ConfigError(f"delta schedule must start at 0, got {list(schedule)}")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError(f"delta schedule must be strictly increasing, got {list(schedule)}")


def collect(net: Network, spec: PropertySpec, n_total: int, min_positives: int = 1,
            delta_schedule: Optional[Sequence[float]] = None, seed: SeedLike = 0,
            clamp: Optional[InputDomain] = None, threads: int = 1) -> LabeledSampleSet:
    """
    Sample a property's pre box and split the points into positives and negatives.

    When fewer than ``min_positives`` positives are found, positives are drawn
    from successively wider domain neighbourhoods until there are enough.

    Args:
        net (Network): Network under repair
        spec (PropertySpec): Property whose pre box is sampled
        n_total (int): Points drawn per stage
        min_positives (int): Positives required for imitation and localization
        delta_schedule: Increasing margins starting at 0, see :func:`default_delta_schedule`
        seed: Integer seed
        clamp (Optional[InputDomain]): Global input box neighbourhoods must stay in
        threads (int): Worker threads for batch evaluation

    Returns:
        LabeledSampleSet: Partitioned samples with their outputs

    Raises:
        PositivesUnavailable: The schedule ran out before enough positives were found
    """
    schedule = list(delta_schedule) if delta_schedule is not None else default_delta_schedule(spec.pre)
    _check_schedule(schedule)
    stage_seeds = as_seed_sequence(seed).spawn(len(schedule))

    points, outputs, satisfied = draw_points(net, spec, spec.pre, n_total, stage_seeds[0], threads)
    sample_set = LabeledSampleSet(
        spec_id=spec.id,
        domain=spec.pre,
        positives=points[satisfied],
        positive_outputs=outputs[satisfied],
        negatives=points[~satisfied],
        negative_outputs=outputs[~satisfied],
    )
    logger.info(f"Property {spec.id}: {sample_set.num_negatives}/{n_total} negatives in the pre box")
    if sample_set.num_positives >= min_positives or not sample_set.has_negatives:
        return sample_set

    extra_points, extra_outputs, extra_in_pre = [], [], []
    found = sample_set.num_positives
    for delta, stage_seed in zip(schedule[1:], stage_seeds[1:]):
        region = delta_neighbourhood(spec.pre, delta, clamp)
        points, outputs, satisfied = draw_points(net, spec, region, n_total, stage_seed, threads)
        extra_points.append(points[satisfied])
        extra_outputs.append(outputs[satisfied])
        extra_in_pre.append(spec.pre.contains(points[satisfied]))
        found += int(satisfied.sum())
        logger.debug(f"Property {spec.id}: delta={delta:g} gives {int(satisfied.sum())} positives")
        if found >= min_positives:
            logger.info(f"Property {spec.id}: relaxed pre box by delta={delta:g} to find {found} positives")
            return replace(
                sample_set,
                positives=np.vstack([sample_set.positives] + extra_points),
                positive_outputs=np.vstack([sample_set.positive_outputs] + extra_outputs),
                positive_in_pre=np.concatenate([sample_set.positive_in_pre] + extra_in_pre),
                delta_used=delta,
            )
    raise PositivesUnavailable(
        f"Property {spec.id}: only {found} positives after delta={schedule[-1]:g}, needed {min_positives}")


def _out_of_reach(found: int, wanted: int, drawn: int, budget: int) -> bool:
    """Whether twice the observed rate, plus one point, still cannot fill ``wanted`` within the budget."""
    if found >= wanted:
        return False
    return found + 2.0 * (found + 1) / drawn * (budget - drawn) < wanted


def draw_polarized(net: Network, spec: PropertySpec, n_negatives: int, n_positives: int,
                   seed: SeedLike = 0, max_draws: Optional[int] = None,
                   threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Keep sampling the pre box until enough negatives and positives are found.

    Stops early once the rate observed so far says the budget cannot supply
    the scarcer class.

    Args:
        net (Network): Network under test
        spec (PropertySpec): Property to sample
        n_negatives (int): Negatives wanted
        n_positives (int): Positives wanted
        seed: Integer seed
        max_draws (Optional[int]): Draw budget, defaults to 200 times the total wanted
        threads (int): Worker threads

    Returns:
        Tuple of negatives and positives, each possibly short when the budget ran out
    """
    wanted = n_negatives + n_positives
    budget = max_draws if max_draws is not None else max(200 * wanted, BATCH_SIZE)
    root = as_seed_sequence(seed)
    negatives, positives = [], []
    n_neg = n_pos = drawn = 0
    while (n_neg < n_negatives or n_pos < n_positives) and drawn < budget:
        jobs = [(spec.pre, BATCH_SIZE, child) for child in root.spawn(BATCHES_PER_ROUND)]
        points, _, satisfied = _evaluate_batches(net, spec, jobs, threads)
        drawn += len(points)
        if n_neg < n_negatives:
            negatives.append(points[~satisfied])
            n_neg += int((~satisfied).sum())
        if n_pos < n_positives:
            positives.append(points[satisfied])
            n_pos += int(satisfied.sum())
        if _out_of_reach(n_neg, n_negatives, drawn, budget) or _out_of_reach(n_pos, n_positives, drawn, budget):
            logger.info(f"Property {spec.id}: target out of reach after {drawn} draws, stopping early")
            break
    m = spec.pre.dim
    neg = np.vstack(negatives)[:n_negatives] if negatives else np.empty((0, m))
    pos = np.vstack(positives)[:n_positives] if positives else np.empty((0, m))
    if len(neg) < n_negatives or len(pos) < n_positives:
        logger.warning(f"Property {spec.id}: draw budget {budget} gave {len(neg)}/{n_negatives} negatives "
                       f"and {len(pos)}/{n_positives} positives")
    return neg, pos


def rebalance(sample_set: LabeledSampleSet, negative_fraction: float, total: int,
              seed: SeedLike = 0) -> LabeledSampleSet:
    """
    Resize a sample set to ``total`` points with the requested negative share.

    The scarcer class is oversampled with replacement; the deviation is noted
    on the returned set.
    """
    if not 0 <= negative_fraction <= 1:
        raise ConfigError(f"negative_fraction must lie in [0, 1], got {negative_fraction}")
    rng = np.random.default_rng(as_seed_sequence(seed))
    want_neg = int(round(total * negative_fraction))
    want_pos = total - want_neg
    notes = list(sample_set.notes)

    def pick(count_have: int, count_want: int, label: str) -> np.ndarray:
        if count_want == 0 or count_have == 0:
            if count_want:
                notes.append(f"no {label} samples available, wanted {count_want}")
            return np.empty(0, dtype=int)
        if count_have >= count_want:
            return np.sort(rng.choice(count_have, size=count_want, replace=False))
        extra = rng.choice(count_have, size=count_want - count_have, replace=True)
        notes.append(f"oversampled {label} samples from {count_have} to {count_want}")
        return np.concatenate([np.arange(count_have), extra])

    neg_idx = pick(sample_set.num_negatives, want_neg, 'negative')
    pos_idx = pick(sample_set.num_positives, want_pos, 'positive')
    return replace(
        sample_set,
        negatives=sample_set.negatives[neg_idx],
        negative_outputs=sample_set.negative_outputs[neg_idx],
        positives=sample_set.positives[pos_idx],
        positive_outputs=sample_set.positive_outputs[pos_idx],
        positive_in_pre=sample_set.positive_in_pre[pos_idx],
        notes=notes,
    )


def extract_negative_domains(net: Network, specs: Sequence[PropertySpec], samples: int,
                             seed: SeedLike = 0, threads: int = 1) -> List[Tuple[PropertySpec, float]]:
    """
    Properties whose pre box yields at least one negative sample.

    Returns:
        List of (property, sampled violation rate) pairs
    """
    found = []
    for spec, child in zip(specs, as_seed_sequence(seed).spawn(len(specs))):
        _, _, satisfied = draw_points(net, spec, spec.pre, samples, child, threads)
        rate = float((~satisfied).mean())
        if rate > 0:
            found.append((spec, rate))
    return found


def _check_unit(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def satisfaction_probability(q: float, u: float, v: float) -> float:
    """
    Probability that the repaired network satisfies its properties.

    Args:
        q (float): Share of positive samples before repair
        u (float): Property improvement, share of negatives repaired
        v (float): Performance drawdown, share of positives broken

    Returns:
        float: ``q (1 - v) + (1 - q) u``
    """
    for name, value in (('q', q), ('u', u), ('v', v)):
        _check_unit(name, value)
    return q * (1.0 - v) + (1.0 - q) * u


def required_sample_size(epsilon: float, confidence: float) -> int:
    """
    Samples needed so an estimated rate is within ``epsilon`` at the given confidence.

    Two-sided Chernoff-Hoeffding bound: the smallest N with
    ``2 exp(-2 N epsilon^2) <= 1 - confidence``.
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if not 0 < confidence < 1:
        raise ConfigError(f"confidence must lie in (0, 1), got {confidence}")
    return int(math.ceil(math.log(2.0 / (1.0 - confidence)) / (2.0 * epsilon * epsilon)))
