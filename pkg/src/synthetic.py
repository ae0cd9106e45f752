"""
Synthetic Module

Buggy networks with a known violation region, for running both repair modes
offline.

The network's first hidden layer holds steep step neurons, one group per face
of the bug box. Each step is 1 past its face, 0 before it and 0.5 on it, so
``s = sum(steps) - (2m - 0.5)`` is positive inside the box and negative outside.
One carrier neuron per later hidden layer passes ``s`` on to the safe output,
which crosses its threshold exactly when ``s > 0``. The remaining neurons are
random filler driving the other outputs.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ConfigError
from src.network import ActivationKind, Network, forward
from src.properties import InputDomain, OutputCondition, PropertySpec
from src.sampler import sample_uniform

logger = logging.getLogger(__name__)

_INDICATOR_GAIN = 10.0


@dataclass
class PlantedBugSpec:
    """
    Recipe for a buggy network.

    Safe behavior is ``y[safe_output] <= safe_threshold`` on the ``pre`` box;
    the network breaks it exactly inside ``bug_region``. Without an explicit
    region a cube covering ``rate`` of the pre box is placed at a seeded spot.
    """

    topology: Tuple[int, ...] = (5, 50, 50, 5)
    activation: ActivationKind = ActivationKind.relu()
    rate: float = 0.1
    bug_region: Optional[InputDomain] = None
    pre: Optional[InputDomain] = None
    safe_output: int = 0
    safe_threshold: float = 0.0
    steepness: float = 100.0
    seed: int = 42
    spec_id: str = 'planted'
    check_samples: int = 10000

    def __post_init__(self):
        self.topology = tuple(int(s) for s in self.topology)
        if len(self.topology) < 3 or min(self.topology) < 1:
            raise ConfigError(f"Need at least one hidden layer, got topology {self.topology}")
        m, n = self.topology[0], self.topology[-1]
        if not 0 < self.rate < 1:
            raise ConfigError(f"rate must lie in (0, 1), got {self.rate}")
        if not 0 <= self.safe_output < n:
            raise ConfigError(f"safe_output {self.safe_output} outside [0, {n})")
        if self.steepness <= 0:
            raise ConfigError("steepness must be positive")
        if self.activation.name == 'leaky_relu' and self.activation.alpha >= 1:
            raise ConfigError("leaky_relu steps need alpha < 1")
        needed = self.step_neurons
        if self.topology[1] < needed:
            raise ConfigError(f"First hidden layer needs {needed} neurons for {m} inputs, has {self.topology[1]}")
        if self.pre is None:
            self.pre = InputDomain.unit(m)
        if self.pre.dim != m:
            raise ConfigError(f"pre box has dimension {self.pre.dim}, topology expects {m}")
        if self.bug_region is not None and not self.bug_region.issubset(self.pre):
            raise ConfigError("bug_region must lie inside the pre box")

    @property
    def step_neurons(self) -> int:
        per_face = 1 if self.activation.name == 'tanh' else 2
        return 2 * self.topology[0] * per_face


class BugOracle:
    """Ground-truth violation classifier: membership in the bug box."""

    def __init__(self, region: InputDomain, achieved_rate: float = float('nan')):
        self.region = region
        self.achieved_rate = achieved_rate

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.region.contains(points)

    def __repr__(self) -> str:
        return f"BugOracle(region={self.region.bounds}, achieved_rate={self.achieved_rate:.4f})"


def place_bug_region(pre: InputDomain, rate: float, rng: np.random.Generator) -> InputDomain:
    """A cube-shaped box covering ``rate`` of ``pre``'s volume at a random spot."""
    widths = pre.widths
    edge = widths * rate ** (1.0 / pre.dim)
    lower = np.asarray(pre.lower) + rng.uniform(0.0, 1.0, size=pre.dim) * (widths - edge)
    return InputDomain(tuple(lower), tuple(lower + edge))


def _step_layer(cfg: PlantedBugSpec, region: InputDomain, rng: np.random.Generator):
    """First layer weights plus the affine map from its states to ``s``."""
    m, width = cfg.topology[0], cfg.topology[1]
    k = cfg.steepness
    # split the steepness between the layer-1 slope and the readout so states stay moderate
    a, eps = np.sqrt(k), 1.0 / np.sqrt(k)
    w = np.zeros((width, m))
    b = np.zeros(width)
    readout = np.zeros(width)
    offset = -(2 * m - 0.5)
    row = 0
    kind = cfg.activation
    floor = kind.alpha if kind.name == 'leaky_relu' else 0.0
    for i in range(m):
        # +1 means the step rises at the lower face, -1 falls at the upper face
        for sign, face in ((1.0, region.lower[i]), (-1.0, region.upper[i])):
            if kind.name == 'tanh':
                # (tanh(z) + 1) / 2 with z = sign * k * (x - face)
                w[row, i] = sign * k
                b[row] = -sign * k * face
                readout[row] = 0.5
                offset += 0.5
                row += 1
            else:
                # (sigma(u + eps/2) - sigma(u - eps/2) - floor eps) / ((1 - floor) eps), u = sign a (x - face)
                for shift, coeff in ((eps / 2, 1.0), (-eps / 2, -1.0)):
                    w[row, i] = sign * a
                    b[row] = -sign * a * face + shift
                    readout[row] = coeff / ((1.0 - floor) * eps)
                    row += 1
                offset -= floor / (1.0 - floor)
    filler = width - row
    if filler:
        w[row:] = rng.normal(0.0, 1.0 / np.sqrt(m), size=(filler, m))
        b[row:] = rng.normal(0.0, 0.1, size=filler)
    return w, b, readout, offset, row


def make_buggy(cfg: PlantedBugSpec) -> Tuple[Network, PropertySpec, BugOracle]:
    """
    Build a network that breaks its safety rule exactly inside a box.

    Args:
        cfg (PlantedBugSpec): Recipe

    Returns:
        Tuple of the network, its property and the ground-truth oracle; the
        oracle carries the violation rate measured by Monte Carlo sampling
    """
    rng = np.random.default_rng(cfg.seed)
    region = cfg.bug_region if cfg.bug_region is not None else place_bug_region(cfg.pre, cfg.rate, rng)
    sizes = cfg.topology
    kind = cfg.activation
    n = sizes[-1]
    relu_family = kind.name != 'tanh'

    w1, b1, readout, offset, first_filler = _step_layer(cfg, region, rng)
    weights: List[np.ndarray] = [w1]
    biases: List[np.ndarray] = [b1]

    # neuron 0 of each later hidden layer carries s; the last hidden layer also
    # holds an indicator relu(c s), zero outside the box, read with weight 0
    hidden = list(zip(sizes[1:-2], sizes[2:-1]))
    carrier_value = 0.5
    shift = float(sizes[0]) if relu_family else 0.0
    prev_filler = np.arange(first_filler, sizes[1])
    for depth, (fan_in, fan_out) in enumerate(hidden):
        w = np.zeros((fan_out, fan_in))
        b = np.zeros(fan_out)
        if depth == 0:
            source_w, source_b = readout, offset
        else:
            source_w, source_b = np.eye(1, fan_in, 0)[0], -shift
        w[0] = source_w
        b[0] = source_b + shift
        if not relu_family:
            carrier_value = float(np.tanh(carrier_value))
        first = 1
        if relu_family and depth == len(hidden) - 1 and fan_out > 1:
            w[1] = _INDICATOR_GAIN * source_w
            b[1] = _INDICATOR_GAIN * source_b
            first = 2
        if fan_out > first and len(prev_filler):
            w[first:, prev_filler] = rng.normal(0.0, 1.0 / np.sqrt(len(prev_filler)),
                                                size=(fan_out - first, len(prev_filler)))
        b[first:] = rng.normal(0.0, 0.1, size=fan_out - first)
        weights.append(w)
        biases.append(b)
        prev_filler = np.arange(first, fan_out)

    fan_in = sizes[-2]
    w_out = np.zeros((n, fan_in))
    b_out = np.zeros(n)
    if len(sizes) == 3:
        # s lives directly in the output pre-activation
        w_out[cfg.safe_output] = readout
        b_out[cfg.safe_output] = cfg.safe_threshold + offset
    elif relu_family:
        w_out[cfg.safe_output, 0] = 1.0
        b_out[cfg.safe_output] = cfg.safe_threshold - shift
    else:
        w_out[cfg.safe_output, 0] = 1.0 / carrier_value
        b_out[cfg.safe_output] = cfg.safe_threshold
    others = [j for j in range(n) if j != cfg.safe_output]
    if others and len(prev_filler):
        w_out[np.ix_(others, prev_filler)] = rng.normal(0.0, 1.0 / np.sqrt(len(prev_filler)),
                                                        size=(len(others), len(prev_filler)))
    b_out[others] = rng.normal(0.0, 0.1, size=len(others))
    weights.append(w_out)
    biases.append(b_out)

    net = Network(tuple(weights), tuple(biases), kind, input_bounds=tuple(cfg.pre.bounds))
    post = OutputCondition.upper_bound(cfg.safe_output, cfg.safe_threshold, n)
    spec = PropertySpec(cfg.spec_id, cfg.pre, post)

    points = sample_uniform(cfg.pre, cfg.check_samples, int(rng.integers(2 ** 32)))
    achieved = float(np.mean(~post.satisfied(forward(net, points))))
    oracle = BugOracle(region, achieved)
    target = float(np.prod(region.widths) / np.prod(cfg.pre.widths))
    if abs(achieved - target) > 0.1 * target:
        logger.warning(f"Planted violation rate {achieved:.4f} is off the target {target:.4f}")
    logger.info(f"Planted bug in {region.bounds}, violation rate {achieved:.4f} ({kind} activation)")
    return net, spec, oracle


def activation_fixtures(topology: Sequence[int] = (5, 50, 50, 5), rate: float = 0.1, seed: int = 42,
                        alpha: float = 0.5) -> List[Tuple[Network, PropertySpec, BugOracle]]:
    """One planted-bug fixture per supported activation."""
    kinds = [ActivationKind.relu(), ActivationKind.tanh(), ActivationKind.leaky_relu(alpha),
             ActivationKind.elu(alpha)]
    return [make_buggy(PlantedBugSpec(tuple(topology), kind, rate, seed=seed)) for kind in kinds]
