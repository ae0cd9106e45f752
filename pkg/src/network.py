"""
Network Module

Dense feedforward networks: forward propagation, behavior traces, activation
functions, exact backpropagation and NNet text I/O.

Layers are indexed the way behavior traces are: state 0 is the input, state
``L-1`` is the output, and affine transform ``k`` maps state ``k`` to state
``k+1``. Every transform except the last is followed by the activation.
"""

import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import ConfigError, InputShapeError, NNetFormatError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]

ACTIVATION_NAMES = ('relu', 'tanh', 'leaky_relu', 'elu')

# NNet files have no "unbounded" marker, anything this large means no bound
_UNBOUNDED = 1e300


@dataclass(frozen=True)
class ActivationKind:
    """Activation applied after every hidden affine transform."""

    name: str = 'relu'
    alpha: float = 0.0

    def __post_init__(self):
        if self.name not in ACTIVATION_NAMES:
            raise ConfigError(f"Unknown activation {self.name!r}, expected one of {ACTIVATION_NAMES}")
        if self.name in ('leaky_relu', 'elu') and not self.alpha > 0:
            raise ConfigError(f"{self.name} needs alpha > 0, got {self.alpha}")

    @classmethod
    def relu(cls) -> 'ActivationKind':
        return cls('relu')

    @classmethod
    def tanh(cls) -> 'ActivationKind':
        return cls('tanh')

    @classmethod
    def leaky_relu(cls, alpha: float = 0.5) -> 'ActivationKind':
        return cls('leaky_relu', alpha)

    @classmethod
    def elu(cls, alpha: float = 0.5) -> 'ActivationKind':
        return cls('elu', alpha)

    @classmethod
    def parse(cls, text: str) -> 'ActivationKind':
        """
        Parse ``relu``, ``tanh``, ``leaky_relu:0.5`` or ``elu:0.5``.

        Parameterized kinds default to alpha 0.5 when no value is given.
        """
        name, _, raw_alpha = text.strip().lower().replace('-', '_').partition(':')
        if name in ('leakyrelu', 'lrelu'):
            name = 'leaky_relu'
        if name in ('leaky_relu', 'elu'):
            try:
                alpha = float(raw_alpha) if raw_alpha else 0.5
            except ValueError:
                raise ConfigError(f"Bad activation parameter in {text!r}")
            return cls(name, alpha)
        return cls(name)

    def __str__(self) -> str:
        if self.name in ('leaky_relu', 'elu'):
            return f"{self.name}:{self.alpha:g}"
        return self.name


def activate(kind: ActivationKind, z):
    """
    Apply an activation elementwise.

    Args:
        kind (ActivationKind): Activation to apply
        z: Scalar or array of pre-activations

    Returns:
        Activated values with the same shape as ``z``
    """
    z = np.asarray(z, dtype=np.float64)
    if kind.name == 'relu':
        out = np.maximum(z, 0.0)
    elif kind.name == 'tanh':
        out = np.tanh(z)
    elif kind.name == 'leaky_relu':
        out = np.where(z > 0, z, kind.alpha * z)
    else:
        # expm1 only on the negative side to avoid overflow warnings
        out = np.where(z > 0, z, kind.alpha * np.expm1(np.minimum(z, 0.0)))
    return out if out.ndim else float(out)


def activate_derivative(kind: ActivationKind, z) -> np.ndarray:
    """Derivative of the activation with respect to its pre-activation, 0 at the ReLU kink."""
    z = np.asarray(z, dtype=np.float64)
    if kind.name == 'relu':
        return np.where(z > 0, 1.0, 0.0)
    if kind.name == 'tanh':
        return 1.0 - np.tanh(z) ** 2
    if kind.name == 'leaky_relu':
        return np.where(z > 0, 1.0, kind.alpha)
    return np.where(z > 0, 1.0, kind.alpha * np.exp(np.minimum(z, 0.0)))


def _frozen(array: ArrayLike, ndim: int, what: str) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    if out.ndim != ndim:
        raise InputShapeError(f"{what} must be {ndim}-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise InputShapeError(f"{what} contains non-finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Network:
    """
    A dense feedforward network.

    Arrays are stored read-only; weight updates build a new network through
    :meth:`with_parameters`.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: ActivationKind = field(default_factory=ActivationKind.relu)
    input_bounds: Optional[Tuple[Tuple[float, float], ...]] = None
    input_means: Optional[Tuple[float, ...]] = None
    input_ranges: Optional[Tuple[float, ...]] = None
    output_mean: float = 0.0
    output_range: float = 1.0

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise InputShapeError(
                f"Need at least one layer and matching weight/bias counts, "
                f"got {len(self.weights)} weights and {len(self.biases)} biases")
        weights = tuple(_frozen(w, 2, f"weights[{k}]") for k, w in enumerate(self.weights))
        biases = tuple(_frozen(b, 1, f"biases[{k}]") for k, b in enumerate(self.biases))
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape[0] != b.shape[0]:
                raise InputShapeError(f"Layer {k}: weight rows {w.shape[0]} != bias length {b.shape[0]}")
            if k > 0 and w.shape[1] != weights[k - 1].shape[0]:
                raise InputShapeError(
                    f"Layer {k}: fan-in {w.shape[1]} does not match previous width {weights[k - 1].shape[0]}")
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'biases', biases)
        if self.input_bounds is not None:
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.input_bounds)
            if len(bounds) != self.input_dim:
                raise InputShapeError(f"input_bounds has {len(bounds)} entries, expected {self.input_dim}")
            object.__setattr__(self, 'input_bounds', bounds)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def num_layers(self) -> int:
        """Number of behavior states L, input and output included."""
        return len(self.weights) + 1

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def with_parameters(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> 'Network':
        """Copy of this network with new weights and biases, metadata kept."""
        return replace(self, weights=tuple(weights), biases=tuple(biases))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


@dataclass
class BehaviorTrace:
    """Post-activation states of one input (or a batch) through every layer."""

    states: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.states)


def random_network(layer_sizes: Sequence[int], activation: Optional[ActivationKind] = None,
                   seed: Optional[int] = None, scale: float = 1.0) -> Network:
    """
    Build a network with Gaussian weights scaled by ``1/sqrt(fan_in)``.

    Args:
        layer_sizes (Sequence[int]): Widths from input to output
        activation (Optional[ActivationKind]): Hidden activation, ReLU by default
        seed (Optional[int]): Random seed
        scale (float): Extra multiplier for weights and biases

    Returns:
        Network: The random network
    """
    if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
        raise ConfigError(f"Invalid layer sizes {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_out, fan_in)))
        biases.append(rng.normal(0.0, 0.1 * scale, size=fan_out))
    return Network(tuple(weights), tuple(biases), activation or ActivationKind.relu())


def _as_batch(net: Network, x: ArrayLike) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise InputShapeError(f"Expected input of length {net.input_dim}, got shape {arr.shape}")
    return batch, single


def _propagate(net: Network, batch: np.ndarray, start: int = 0) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Pre-activations and states from state ``start`` onwards."""
    pre_activations = []
    states = [batch]
    last = len(net.weights) - 1
    for k in range(start, len(net.weights)):
        z = states[-1] @ net.weights[k].T + net.biases[k]
        pre_activations.append(z)
        states.append(z if k == last else activate(net.activation, z))
    return pre_activations, states


def forward(net: Network, x: ArrayLike) -> np.ndarray:
    """
    Evaluate the network.

    Args:
        net (Network): Network to evaluate
        x: One input of length m or a batch of shape (N, m)

    Returns:
        np.ndarray: Output of length n, or (N, n) for a batch
    """
    batch, single = _as_batch(net, x)
    _, states = _propagate(net, batch)
    return states[-1][0] if single else states[-1]


def forward_from(net: Network, state: np.ndarray, layer: int) -> np.ndarray:
    """
    Continue propagation from a cached state.

    Args:
        net (Network): Network to evaluate
        state (np.ndarray): Batch of states at trace index ``layer``
        layer (int): Trace index of ``state``, 0 for the input

    Returns:
        np.ndarray: Batch of outputs
    """
    if not 0 <= layer < net.num_layers:
        raise InputShapeError(f"Layer {layer} outside [0, {net.num_layers})")
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 2 or state.shape[1] != net.layer_sizes[layer]:
        raise InputShapeError(f"State for layer {layer} must have width {net.layer_sizes[layer]}")
    _, states = _propagate(net, state, start=layer)
    return states[-1]


def trace(net: Network, x: ArrayLike) -> BehaviorTrace:
    """
    Record the full behavior of an input: input, every hidden state, output.

    Args:
        net (Network): Network to evaluate
        x: One input or a batch

    Returns:
        BehaviorTrace: ``L`` states, batched when ``x`` is a batch
    """
    batch, single = _as_batch(net, x)
    _, states = _propagate(net, batch)
    if single:
        states = [s[0] for s in states]
    return BehaviorTrace(states)


@dataclass
class Gradient:
    """Parameter-shaped gradient with the loss it was computed at."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    loss: float = 0.0

    def __add__(self, other: 'Gradient') -> 'Gradient':
        return Gradient([a + b for a, b in zip(self.weights, other.weights)],
                        [a + b for a, b in zip(self.biases, other.biases)],
                        self.loss + other.loss)

    def __mul__(self, factor: float) -> 'Gradient':
        return Gradient([factor * w for w in self.weights],
                        [factor * b for b in self.biases],
                        factor * self.loss)

    __rmul__ = __mul__

    def is_finite(self) -> bool:
        return (math.isfinite(self.loss)
                and all(np.all(np.isfinite(w)) for w in self.weights)
                and all(np.all(np.isfinite(b)) for b in self.biases))


def _check_norm(norm: int):
    if norm not in (1, 2):
        raise ConfigError(f"Loss norm must be 1 or 2, got {norm}")


def distance_loss(outputs: np.ndarray, targets: np.ndarray, norm: int = 2) -> float:
    """
    Summed distance between outputs and targets.

    ``norm=2`` sums squared Euclidean distances, ``norm=1`` sums absolute errors.
    """
    _check_norm(norm)
    diff = np.asarray(outputs, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    if norm == 2:
        return float(np.sum(diff * diff))
    return float(np.sum(np.abs(diff)))


def gradient(net: Network, inputs: ArrayLike, targets: ArrayLike, norm: int = 2) -> Gradient:
    """
    Backpropagate the batch-summed distance loss.

    Args:
        net (Network): Network to differentiate
        inputs: Batch of inputs (N, m)
        targets: Batch of targets (N, n)
        norm (int): 1 or 2, see :func:`distance_loss`

    Returns:
        Gradient: d loss / d parameters, and the loss value
    """
    _check_norm(norm)
    batch, _ = _as_batch(net, inputs)
    labels = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if batch.shape[0] == 0:
        raise InputShapeError("Gradient needs a nonempty batch")
    if labels.shape != (batch.shape[0], net.output_dim):
        raise InputShapeError(f"Targets must have shape {(batch.shape[0], net.output_dim)}, got {labels.shape}")

    pre_activations, states = _propagate(net, batch)
    diff = states[-1] - labels
    if norm == 2:
        loss = float(np.sum(diff * diff))
        delta = 2.0 * diff
    else:
        loss = float(np.sum(np.abs(diff)))
        delta = np.sign(diff)

    count = len(net.weights)
    grad_w: List[np.ndarray] = [None] * count
    grad_b: List[np.ndarray] = [None] * count
    for k in range(count - 1, -1, -1):
        grad_w[k] = delta.T @ states[k]
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * activate_derivative(net.activation, pre_activations[k - 1])
    return Gradient(grad_w, grad_b, loss)


def sgd_step(net: Network, grad: Gradient, learning_rate: float) -> Network:
    """Plain gradient descent update, returns a new network."""
    weights = [w - learning_rate * g for w, g in zip(net.weights, grad.weights)]
    biases = [b - learning_rate * g for b, g in zip(net.biases, grad.biases)]
    return net.with_parameters(weights, biases)


# NNet text format

def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_nnet(net: Network) -> str:
    """
    Write a network in NNet text format.

    Values are written with ``repr`` so parsing restores them exactly. The
    activation is recorded in a header comment.
    """
    sizes = net.layer_sizes
    m = net.input_dim
    if net.input_bounds is not None:
        mins = [lo for lo, _ in net.input_bounds]
        maxes = [hi for _, hi in net.input_bounds]
    else:
        mins, maxes = [-_UNBOUNDED] * m, [_UNBOUNDED] * m
    means = list(net.input_means) if net.input_means is not None else [0.0] * m
    ranges = list(net.input_ranges) if net.input_ranges is not None else [1.0] * m

    lines = [
        '// Dense feedforward network',
        f'// activation: {net.activation}',
        f'{len(net.weights)},{m},{net.output_dim},{max(sizes)},',
        ','.join(str(s) for s in sizes) + ',',
        '0,',
        ','.join(_fmt(v) for v in mins) + ',',
        ','.join(_fmt(v) for v in maxes) + ',',
        ','.join(_fmt(v) for v in means + [net.output_mean]) + ',',
        ','.join(_fmt(v) for v in ranges + [net.output_range]) + ',',
    ]
    for w, b in zip(net.weights, net.biases):
        for row in w:
            lines.append(','.join(_fmt(v) for v in row) + ',')
        for v in b:
            lines.append(_fmt(v) + ',')
    return '\n'.join(lines) + '\n'


class _Lines:
    """Cursor over the data lines of an NNet file."""

    def __init__(self, lines: List[Tuple[int, str]]):
        self.lines = lines
        self.pos = 0

    def take(self, block: str, expected: Optional[int] = None) -> List[float]:
        if self.pos >= len(self.lines):
            raise NNetFormatError(f"Unexpected end of file: missing {block}")
        lineno, text = self.lines[self.pos]
        self.pos += 1
        tokens = [t.strip() for t in text.split(',') if t.strip()]
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise NNetFormatError(f"Line {lineno}: non-numeric value in {block}")
        if expected is not None and len(values) != expected:
            raise NNetFormatError(f"Line {lineno}: {block} has {len(values)} values, expected {expected}")
        return values


def parse_nnet(text: str, activation: Optional[ActivationKind] = None) -> Network:
    """
    Parse NNet text into a network.

    Args:
        text (str): File contents
        activation (Optional[ActivationKind]): Overrides the activation named in
            the header comment; ReLU when neither is given

    Returns:
        Network: Parsed network with normalization metadata

    Raises:
        NNetFormatError: On malformed headers, size mismatches or truncation
    """
    header_activation = None
    data_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('//'):
            match = re.match(r'//\s*activation:\s*(\S+)', line)
            if match and not data_lines:
                header_activation = ActivationKind.parse(match.group(1))
            continue
        data_lines.append((lineno, line))

    cursor = _Lines(data_lines)
    head = cursor.take('header line', 4)
    num_layers, m, n, _ = (int(v) for v in head)
    if num_layers < 1 or m < 1 or n < 1:
        raise NNetFormatError(f"Invalid header {head}")
    sizes = [int(v) for v in cursor.take('layer sizes', num_layers + 1)]
    if sizes[0] != m or sizes[-1] != n:
        raise NNetFormatError(f"Layer sizes {sizes} disagree with input/output sizes {m}/{n}")
    cursor.take('flag line')
    mins = cursor.take('input minimums', m)
    maxes = cursor.take('input maximums', m)
    means = cursor.take('input means', m + 1)
    ranges = cursor.take('input ranges', m + 1)

    weights, biases = [], []
    for k in range(num_layers):
        rows = [cursor.take(f'weights for layer {k} row {i}', sizes[k]) for i in range(sizes[k + 1])]
        bias = [cursor.take(f'bias for layer {k} entry {i}', 1)[0] for i in range(sizes[k + 1])]
        weights.append(np.array(rows, dtype=np.float64).reshape(sizes[k + 1], sizes[k]))
        biases.append(np.array(bias, dtype=np.float64))
    if cursor.pos != len(data_lines):
        logger.warning(f"Ignoring {len(data_lines) - cursor.pos} trailing lines in NNet data")

    bounded = all(abs(v) < _UNBOUNDED for v in mins + maxes)
    net = Network(
        weights=tuple(weights),
        biases=tuple(biases),
        activation=activation or header_activation or ActivationKind.relu(),
        input_bounds=tuple(zip(mins, maxes)) if bounded else None,
        input_means=tuple(means[:m]),
        input_ranges=tuple(ranges[:m]),
        output_mean=means[m],
        output_range=ranges[m],
    )
    logger.debug(f"Parsed NNet with layer sizes {sizes} and {net.parameter_count} parameters")
    return net


def load_nnet(path: str, activation: Optional[ActivationKind] = None) -> Network:
    with open(path, 'r') as f:
        return parse_nnet(f.read(), activation)


def save_nnet(net: Network, path: str) -> None:
    with open(path, 'w') as f:
        f.write(serialize_nnet(net))
