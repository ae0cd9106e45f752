"""
Localizer Module

Ranks neurons by how differently they behave on negative and positive
samples. Layers are numbered by their trace index: 1 is the first hidden
layer, ``L - 1`` the output layer.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.exceptions import ConfigError, InputShapeError
from src.network import Network, trace
from src.sampler import LabeledSampleSet
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

MODES = ('fast', 'exact')
_TRACE_CHUNK = 4096


@dataclass(frozen=True, order=True)
class NeuronIndex:
    layer: int
    neuron: int

    def check(self, net: Network):
        if not 1 <= self.layer < net.num_layers:
            raise InputShapeError(f"Layer {self.layer} outside [1, {net.num_layers - 1}]")
        if not 0 <= self.neuron < net.layer_sizes[self.layer]:
            raise InputShapeError(f"Neuron {self.neuron} outside layer {self.layer} "
                                  f"of width {net.layer_sizes[self.layer]}")

    def to_dict(self) -> dict:
        return {'layer': self.layer, 'neuron': self.neuron}


class ResponsibilityMatrix:
    """
    Non-negative responsibility scores, one vector per non-input layer.
    """

    def __init__(self, rows: Sequence[np.ndarray]):
        rows = tuple(np.asarray(r, dtype=np.float64).copy() for r in rows)
        if not rows:
            raise InputShapeError("A responsibility matrix needs at least one layer")
        for i, row in enumerate(rows, start=1):
            if row.ndim != 1 or not np.all(np.isfinite(row)) or np.any(row < 0):
                raise InputShapeError(f"Layer {i}: scores must be a finite non-negative vector")
        self.rows = rows

    @classmethod
    def zeros(cls, net: Network) -> 'ResponsibilityMatrix':
        return cls([np.zeros(d) for d in net.layer_sizes[1:]])

    @property
    def layer_sizes(self) -> List[int]:
        return [len(r) for r in self.rows]

    @property
    def num_layers(self) -> int:
        return len(self.rows)

    def layer(self, index: int) -> np.ndarray:
        """Scores of trace layer ``index`` (1-based)."""
        if not 1 <= index <= len(self.rows):
            raise InputShapeError(f"Layer {index} outside [1, {len(self.rows)}]")
        return self.rows[index - 1]

    def __add__(self, other: 'ResponsibilityMatrix') -> 'ResponsibilityMatrix':
        if self.layer_sizes != other.layer_sizes:
            raise InputShapeError(f"Cannot add matrices of shapes {self.layer_sizes} and {other.layer_sizes}")
        return ResponsibilityMatrix([a + b for a, b in zip(self.rows, other.rows)])

    def __eq__(self, other) -> bool:
        return (isinstance(other, ResponsibilityMatrix) and self.layer_sizes == other.layer_sizes
                and all(np.array_equal(a, b) for a, b in zip(self.rows, other.rows)))

    def __repr__(self) -> str:
        return f"ResponsibilityMatrix(layers={self.layer_sizes})"

    def to_frame(self) -> pd.DataFrame:
        """One row per neuron: layer, neuron, score."""
        records = [{'layer': i, 'neuron': j, 'score': float(s)}
                   for i, row in enumerate(self.rows, start=1) for j, s in enumerate(row)]
        return pd.DataFrame.from_records(records, columns=['layer', 'neuron', 'score'])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'ResponsibilityMatrix':
        missing = {'layer', 'neuron', 'score'} - set(frame.columns)
        if missing:
            raise InputShapeError(f"Responsibility table lacks columns {sorted(missing)}")
        frame = frame.sort_values(['layer', 'neuron'])
        rows = []
        for layer, group in frame.groupby('layer', sort=True):
            if list(group['neuron']) != list(range(len(group))):
                raise InputShapeError(f"Layer {layer}: neuron indices are not contiguous from 0")
            rows.append(group['score'].to_numpy(dtype=np.float64))
        if [int(l) for l in frame['layer'].unique()] != list(range(1, len(rows) + 1)):
            raise InputShapeError("Layers must be numbered contiguously from 1")
        return cls(rows)


def _check_samples(net: Network, positives: np.ndarray, negatives: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    positives = np.asarray(positives, dtype=np.float64).reshape(-1, net.input_dim)
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, net.input_dim)
    if len(positives) == 0 or len(negatives) == 0:
        raise InputShapeError("Responsibility needs at least one positive and one negative sample")
    return positives, negatives


def _hidden_states(net: Network, points: np.ndarray, threads: int) -> List[np.ndarray]:
    """Post-activation states of layers 1 .. L-1, stacked over all points."""
    chunks = [points[i:i + _TRACE_CHUNK] for i in range(0, len(points), _TRACE_CHUNK)]
    traces = ordered_map(lambda chunk: trace(net, chunk).states[1:], chunks, threads)
    return [np.vstack([t[i] for t in traces]) for i in range(net.num_layers - 1)]


def _pairwise_abs_sum(neg: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """``sum_n sum_p |neg[n, j] - pos[p, j]|`` for every column j, via sorted prefix sums."""
    result = np.empty(neg.shape[1])
    count = pos.shape[0]
    for j in range(neg.shape[1]):
        ordered = np.sort(pos[:, j])
        prefix = np.concatenate([[0.0], np.cumsum(ordered)])
        below = np.searchsorted(ordered, neg[:, j], side='left')
        a = neg[:, j]
        lower = a * below - prefix[below]
        upper = (prefix[-1] - prefix[below]) - a * (count - below)
        result[j] = float(np.sum(lower + upper))
    return np.maximum(result, 0.0)


def responsibility_exact(net: Network, positives: np.ndarray, negatives: np.ndarray,
                         threads: int = 1) -> ResponsibilityMatrix:
    """
    Pairwise responsibility: ``r_i = sum_n sum_p |N_i(x_n) - N_i(x_p)|``.

    Args:
        net (Network): Network under repair
        positives (np.ndarray): Positive inputs (Np, m)
        negatives (np.ndarray): Negative inputs (Nn, m)
        threads (int): Worker threads for tracing

    Returns:
        ResponsibilityMatrix: Scores for every non-input layer
    """
    positives, negatives = _check_samples(net, positives, negatives)
    pos_states = _hidden_states(net, positives, threads)
    neg_states = _hidden_states(net, negatives, threads)
    return ResponsibilityMatrix([_pairwise_abs_sum(n, p) for n, p in zip(neg_states, pos_states)])


def responsibility_fast(net: Network, positives: np.ndarray, negatives: np.ndarray,
                        normalize: bool = True, threads: int = 1) -> ResponsibilityMatrix:
    """
    Summed responsibility: ``r_i = |sum_n N_i(x_n) - sum_p N_i(x_p)|``.

    One pass over each set. With ``normalize`` and sets of different sizes,
    each sum is divided by its set size first, so a 10%/90% split does not
    turn the size difference into a score. The result never exceeds
    :func:`responsibility_exact` and equals it for one sample of each kind.

    Args:
        net (Network): Network under repair
        positives (np.ndarray): Positive inputs (Np, m)
        negatives (np.ndarray): Negative inputs (Nn, m)
        normalize (bool): Divide by set sizes when they differ
        threads (int): Worker threads for tracing

    Returns:
        ResponsibilityMatrix: Scores for every non-input layer
    """
    positives, negatives = _check_samples(net, positives, negatives)
    pos_states = _hidden_states(net, positives, threads)
    neg_states = _hidden_states(net, negatives, threads)
    scale = normalize and len(positives) != len(negatives)
    rows = []
    for n, p in zip(neg_states, pos_states):
        neg_sum, pos_sum = n.sum(axis=0), p.sum(axis=0)
        if scale:
            neg_sum, pos_sum = neg_sum / len(n), pos_sum / len(p)
        rows.append(np.abs(neg_sum - pos_sum))
    return ResponsibilityMatrix(rows)


def responsibility(net: Network, positives: np.ndarray, negatives: np.ndarray, mode: str = 'fast',
                   normalize: bool = True, threads: int = 1) -> ResponsibilityMatrix:
    if mode == 'fast':
        return responsibility_fast(net, positives, negatives, normalize, threads)
    if mode == 'exact':
        return responsibility_exact(net, positives, negatives, threads)
    raise ConfigError(f"Unknown responsibility mode {mode!r}, expected one of {MODES}")


def localize(net: Network, sample_sets: Sequence[LabeledSampleSet], mode: str = 'fast',
             normalize: bool = True, threads: int = 1) -> ResponsibilityMatrix:
    """
    Accumulate responsibility over every violated property.

    Sets without negatives are skipped; the others add their matrices
    element-wise. In fast mode with ``normalize`` every property adds its
    per-sample means, so a property whose two sets happen to have equal size
    does not outweigh the others by a factor of its sample count. Exact mode
    adds the pairwise sums unchanged.
    """
    total = ResponsibilityMatrix.zeros(net)
    used = 0
    for sample_set in sample_sets:
        if not sample_set.has_negatives:
            continue
        matrix = responsibility(net, sample_set.positives, sample_set.negatives, mode, normalize, threads)
        size = len(sample_set.negatives)
        if mode == 'fast' and normalize and len(sample_set.positives) == size:
            matrix = ResponsibilityMatrix([row / size for row in matrix.rows])
        total = total + matrix
        used += 1
    logger.info(f"Responsibility accumulated over {used} properties ({mode} mode)")
    return total


@dataclass
class NeuronSelection:
    """Chosen neurons in descending responsibility, with their scores."""

    neurons: List[NeuronIndex]
    scores: List[float]
    truncated: bool = False

    def __iter__(self) -> Iterator[NeuronIndex]:
        return iter(self.neurons)

    def __len__(self) -> int:
        return len(self.neurons)

    def __getitem__(self, item):
        return self.neurons[item]


def select_top(matrix: ResponsibilityMatrix, r: int, layer_filter: Optional[int] = None) -> NeuronSelection:
    """
    Pick the ``r`` most responsible neurons.

    Args:
        matrix (ResponsibilityMatrix): Scores
        r (int): Number of neurons
        layer_filter (Optional[int]): Restrict the choice to one layer

    Returns:
        NeuronSelection: Sorted by descending score, ties by (layer, neuron);
        ``truncated`` is set when fewer than ``r`` neurons were available
    """
    if r < 1:
        raise ConfigError(f"r must be positive, got {r}")
    if layer_filter is not None and not 1 <= layer_filter <= matrix.num_layers:
        raise ConfigError(f"Layer filter {layer_filter} outside [1, {matrix.num_layers}]")
    candidates = [(layer, neuron, float(score))
                  for layer, row in enumerate(matrix.rows, start=1)
                  if layer_filter is None or layer == layer_filter
                  for neuron, score in enumerate(row)]
    candidates.sort(key=lambda c: (-c[2], c[0], c[1]))
    truncated = r > len(candidates)
    if truncated:
        logger.warning(f"Requested {r} neurons but only {len(candidates)} are available")
    chosen = candidates[:r]
    return NeuronSelection([NeuronIndex(l, n) for l, n, _ in chosen], [s for _, _, s in chosen], truncated)
