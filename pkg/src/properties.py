"""
Properties Module

Properties made of an input box (pre-condition) and a union of
linear output constraints (post-condition), sample classification and domain
neighbourhoods.
"""

import itertools
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import InputShapeError, PropertyFormatError
from src.network import Network, forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearAtom:
    """The constraint ``coeffs . y <= rhs`` (``<`` when strict)."""

    coeffs: Tuple[float, ...]
    rhs: float = 0.0
    strict: bool = False

    def holds(self, outputs: np.ndarray) -> np.ndarray:
        value = np.asarray(outputs, dtype=np.float64) @ np.asarray(self.coeffs) - self.rhs
        return value < 0 if self.strict else value <= 0

    def to_dict(self) -> Dict[str, Any]:
        return {'coeffs': list(self.coeffs), 'rhs': self.rhs, 'strict': self.strict}


def _pairwise(first: int, second: int, n: int, strict: bool) -> LinearAtom:
    """``y[first] - y[second] <= 0``."""
    coeffs = [0.0] * n
    coeffs[first] += 1.0
    coeffs[second] -= 1.0
    return LinearAtom(tuple(coeffs), 0.0, strict)


class OutputCondition:
    """
    A post-condition: a disjunction of conjunctions of linear atoms.

    ``argmin``/``argmax``/``not_argmin``/``not_argmax`` shorthands expand to
    pairwise atoms when built through the class methods or :meth:`from_dict`.
    """

    def __init__(self, clauses: Sequence[Sequence[LinearAtom]]):
        self.clauses: Tuple[Tuple[LinearAtom, ...], ...] = tuple(tuple(c) for c in clauses)
        if not self.clauses or any(not c for c in self.clauses):
            raise PropertyFormatError("An output condition needs at least one nonempty clause")
        dims = {len(atom.coeffs) for clause in self.clauses for atom in clause}
        if len(dims) != 1:
            raise PropertyFormatError(f"Atoms disagree on the output dimension: {sorted(dims)}")
        self.output_dim = dims.pop()
        self._matrices = []
        for clause in self.clauses:
            self._matrices.append((
                np.array([a.coeffs for a in clause], dtype=np.float64),
                np.array([a.rhs for a in clause], dtype=np.float64),
                np.array([a.strict for a in clause], dtype=bool),
            ))

    def __eq__(self, other) -> bool:
        return isinstance(other, OutputCondition) and self.clauses == other.clauses

    def __hash__(self) -> int:
        return hash(self.clauses)

    def __repr__(self) -> str:
        return f"OutputCondition({len(self.clauses)} clauses)"

    @classmethod
    def argmin(cls, index: int, n: int) -> 'OutputCondition':
        return cls([_argmin_atoms(index, n)])

    @classmethod
    def argmax(cls, index: int, n: int) -> 'OutputCondition':
        return cls([_argmax_atoms(index, n)])

    @classmethod
    def not_argmin(cls, index: int, n: int) -> 'OutputCondition':
        return cls([[_pairwise(j, index, n, True)] for j in range(n) if j != index])

    @classmethod
    def upper_bound(cls, index: int, bound: float, n: int, strict: bool = False) -> 'OutputCondition':
        """``y[index] <= bound``."""
        coeffs = [0.0] * n
        coeffs[index] = 1.0
        return cls([[LinearAtom(tuple(coeffs), float(bound), strict)]])

    @classmethod
    def lower_bound(cls, index: int, bound: float, n: int, strict: bool = False) -> 'OutputCondition':
        """``y[index] >= bound``."""
        coeffs = [0.0] * n
        coeffs[index] = -1.0
        return cls([[LinearAtom(tuple(coeffs), -float(bound), strict)]])

    def satisfied(self, outputs: np.ndarray) -> np.ndarray:
        """
        Check a batch of outputs.

        Args:
            outputs (np.ndarray): Batch of shape (N, n)

        Returns:
            np.ndarray: Boolean mask of length N
        """
        outputs = np.asarray(outputs, dtype=np.float64)
        if outputs.ndim != 2 or outputs.shape[1] != self.output_dim:
            raise InputShapeError(f"Expected outputs of width {self.output_dim}, got shape {outputs.shape}")
        result = np.zeros(outputs.shape[0], dtype=bool)
        for coeffs, rhs, strict in self._matrices:
            values = outputs @ coeffs.T - rhs
            ok = np.where(strict, values < 0, values <= 0).all(axis=1)
            result |= ok
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {'clauses': [[atom.to_dict() for atom in clause] for clause in self.clauses]}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], n: Optional[int] = None) -> 'OutputCondition':
        """
        Build a condition from its JSON form.

        Args:
            doc: ``{"clauses": [[atom, ...], ...]}``; an atom is
                ``{"coeffs": [...], "rhs": r, "strict": b}`` or one of the
                shorthands ``{"argmin": i}``, ``{"argmax": i}``,
                ``{"not_argmin": i}``, ``{"not_argmax": i}``
            n: Output dimension, required when only shorthands are used

        Returns:
            OutputCondition: Condition in expanded form
        """
        if not isinstance(doc, dict) or not isinstance(doc.get('clauses'), list):
            raise PropertyFormatError("Post-condition must be an object with a 'clauses' list")
        if n is None:
            n = next((len(atom['coeffs']) for clause in doc['clauses'] for atom in clause
                      if isinstance(atom, dict) and 'coeffs' in atom), None)
            if n is None:
                raise PropertyFormatError("Output dimension unknown: give 'output_dim' or a coefficient atom")
        clauses: List[List[LinearAtom]] = []
        for clause in doc['clauses']:
            if not isinstance(clause, list) or not clause:
                raise PropertyFormatError("Each clause must be a nonempty list of atoms")
            # every atom expands to a disjunction, the clause becomes their product
            options = [_expand_atom(atom, n) for atom in clause]
            for combo in itertools.product(*options):
                clauses.append([atom for part in combo for atom in part])
        return cls(clauses)


def _argmin_atoms(index: int, n: int) -> List[LinearAtom]:
    _check_index(index, n)
    return [_pairwise(index, j, n, False) for j in range(n) if j != index]


def _argmax_atoms(index: int, n: int) -> List[LinearAtom]:
    _check_index(index, n)
    return [_pairwise(j, index, n, False) for j in range(n) if j != index]


def _check_index(index: int, n: int):
    if not 0 <= index < n:
        raise PropertyFormatError(f"Output index {index} outside [0, {n})")


def _expand_atom(atom: Any, n: int) -> List[List[LinearAtom]]:
    """An atom as a list of alternative conjunctions."""
    if not isinstance(atom, dict):
        raise PropertyFormatError(f"Atom must be an object, got {atom!r}")
    if 'argmin' in atom:
        return [_argmin_atoms(int(atom['argmin']), n)]
    if 'argmax' in atom:
        return [_argmax_atoms(int(atom['argmax']), n)]
    if 'not_argmin' in atom:
        i = int(atom['not_argmin'])
        _check_index(i, n)
        return [[_pairwise(j, i, n, True)] for j in range(n) if j != i]
    if 'not_argmax' in atom:
        i = int(atom['not_argmax'])
        _check_index(i, n)
        return [[_pairwise(i, j, n, True)] for j in range(n) if j != i]
    try:
        coeffs = tuple(float(c) for c in atom['coeffs'])
        rhs = float(atom.get('rhs', 0.0))
    except (KeyError, TypeError, ValueError):
        raise PropertyFormatError(f"Malformed atom {atom!r}")
    if len(coeffs) != n:
        raise PropertyFormatError(f"Atom has {len(coeffs)} coefficients, expected {n}")
    return [[LinearAtom(coeffs, rhs, bool(atom.get('strict', False)))]]


@dataclass(frozen=True)
class InputDomain:
    """Axis-aligned input box ``[lower_i, upper_i]``."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise PropertyFormatError("Domain bounds must be nonempty and of equal length")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise PropertyFormatError(f"Empty domain: lower {lower} exceeds upper {upper}")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Tuple[float, float]]) -> 'InputDomain':
        return cls(tuple(lo for lo, _ in bounds), tuple(hi for _, hi in bounds))

    @classmethod
    def unit(cls, dim: int) -> 'InputDomain':
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def bounds(self) -> List[Tuple[float, float]]:
        return list(zip(self.lower, self.upper))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership mask for a batch (closed box)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.dim:
            raise InputShapeError(f"Expected points of length {self.dim}, got shape {points.shape}")
        return np.all((points >= np.asarray(self.lower)) & (points <= np.asarray(self.upper)), axis=1)

    def issubset(self, other: 'InputDomain') -> bool:
        return (self.dim == other.dim
                and all(a >= b for a, b in zip(self.lower, other.lower))
                and all(a <= b for a, b in zip(self.upper, other.upper)))

    def to_dict(self) -> Dict[str, Any]:
        return {'lower': list(self.lower), 'upper': list(self.upper)}


@dataclass(frozen=True)
class PropertySpec:
    """A property: inputs in ``pre`` must produce outputs satisfying ``post``."""

    id: str
    pre: InputDomain
    post: OutputCondition

    def to_dict(self) -> Dict[str, Any]:
        return {'id': self.id, 'pre': self.pre.to_dict(), 'output_dim': self.post.output_dim,
                'post': self.post.to_dict()}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'PropertySpec':
        try:
            pre = InputDomain(tuple(doc['pre']['lower']), tuple(doc['pre']['upper']))
            spec_id = str(doc['id'])
        except (KeyError, TypeError):
            raise PropertyFormatError("Property needs 'id' and 'pre' with 'lower' and 'upper'")
        post = OutputCondition.from_dict(doc.get('post'), doc.get('output_dim'))
        return cls(spec_id, pre, post)


class SampleClass(Enum):
    POSITIVE = 'positive'
    NEGATIVE = 'negative'
    OUTSIDE_PRE = 'outside_pre'


def satisfies(post: OutputCondition, y) -> bool:
    """True iff some clause of ``post`` holds entirely for output ``y``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise InputShapeError(f"Expected a single output vector, got shape {y.shape}")
    return bool(post.satisfied(y[None, :])[0])


def _check_spec_fits(net: Network, spec: PropertySpec):
    if spec.pre.dim != net.input_dim or spec.post.output_dim != net.output_dim:
        raise InputShapeError(
            f"Property {spec.id} is {spec.pre.dim}->{spec.post.output_dim}, "
            f"network is {net.input_dim}->{net.output_dim}")


def classify_batch(net: Network, spec: PropertySpec, points: np.ndarray) -> np.ndarray:
    """
    Classify a batch of inputs.

    Returns:
        np.ndarray: Object array of :class:`SampleClass` values
    """
    _check_spec_fits(net, spec)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = spec.pre.contains(points)
    result = np.full(points.shape[0], SampleClass.OUTSIDE_PRE, dtype=object)
    if inside.any():
        ok = spec.post.satisfied(forward(net, points[inside]))
        result[np.flatnonzero(inside)] = [SampleClass.POSITIVE if flag else SampleClass.NEGATIVE for flag in ok]
    return result


def classify_sample(net: Network, spec: PropertySpec, x) -> SampleClass:
    """Classify one input as positive, negative or outside the pre-condition."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise InputShapeError(f"Expected input of length {net.input_dim}, got shape {x.shape}")
    return classify_batch(net, spec, x[None, :])[0]


def delta_neighbourhood(domain: InputDomain, delta: float,
                        clamp: Optional[InputDomain] = None) -> InputDomain:
    """
    Enlarge a box by ``delta`` on every side, optionally intersected with ``clamp``.

    Args:
        domain (InputDomain): Box to enlarge
        delta (float): Nonnegative margin
        clamp (Optional[InputDomain]): Global input box to stay inside

    Returns:
        InputDomain: The neighbourhood
    """
    if delta < 0:
        raise PropertyFormatError(f"delta must be nonnegative, got {delta}")
    lower = np.asarray(domain.lower) - delta
    upper = np.asarray(domain.upper) + delta
    if clamp is not None:
        lower = np.maximum(lower, clamp.lower)
        upper = np.minimum(upper, clamp.upper)
    return InputDomain(tuple(lower), tuple(upper))


@dataclass
class SpecSetVerdict:
    satisfied: bool
    verdicts: Dict[str, bool]
    violation_rates: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {'satisfied': self.satisfied, 'verdicts': self.verdicts,
                'violation_rates': self.violation_rates}


def spec_set_satisfied(net: Network, specs: Sequence[PropertySpec],
                       evidence: Sequence[np.ndarray]) -> SpecSetVerdict:
    """
    Sampling-based verdict for a set of properties.

    Args:
        net (Network): Network under test
        specs: Properties
        evidence: One batch of sampled points per property, inside its pre box

    Returns:
        SpecSetVerdict: Overall verdict, per-property verdicts and violation rates
    """
    if len(specs) != len(evidence):
        raise InputShapeError(f"Got {len(evidence)} evidence batches for {len(specs)} properties")
    verdicts, rates = {}, {}
    for spec, points in zip(specs, evidence):
        points = np.asarray(points, dtype=np.float64).reshape(-1, net.input_dim)
        if len(points) == 0:
            verdicts[spec.id], rates[spec.id] = True, 0.0
            continue
        classes = classify_batch(net, spec, points)
        negatives = int(np.sum(classes == SampleClass.NEGATIVE))
        verdicts[spec.id] = negatives == 0
        rates[spec.id] = negatives / len(points)
        if negatives:
            logger.info(f"Property {spec.id}: {negatives}/{len(points)} sampled counterexamples")
    return SpecSetVerdict(all(verdicts.values()), verdicts, rates)


def normalize_spec(spec: PropertySpec, net: Network) -> PropertySpec:
    """
    Rewrite a property stated in raw units into the network's normalized space.

    Inputs are clipped to the network's input bounds and mapped through
    ``(x - mean) / range``; outputs are denormalized as ``y * range + mean``,
    so each atom ``c . (y r + mu) <= d`` becomes ``(r c) . y <= d - mu sum(c)``.
    """
    if net.input_means is None or net.input_ranges is None:
        raise PropertyFormatError("Network carries no normalization constants")
    lower = np.asarray(spec.pre.lower)
    upper = np.asarray(spec.pre.upper)
    if net.input_bounds is not None:
        mins = np.asarray([lo for lo, _ in net.input_bounds])
        maxes = np.asarray([hi for _, hi in net.input_bounds])
        lower, upper = np.clip(lower, mins, maxes), np.clip(upper, mins, maxes)
    means, ranges = np.asarray(net.input_means), np.asarray(net.input_ranges)
    pre = InputDomain(tuple((lower - means) / ranges), tuple((upper - means) / ranges))

    r, mu = net.output_range, net.output_mean
    clauses = [[LinearAtom(tuple(r * c for c in atom.coeffs), atom.rhs - mu * sum(atom.coeffs), atom.strict)
                for atom in clause] for clause in spec.post.clauses]
    return PropertySpec(spec.id, pre, OutputCondition(clauses))


def parse_properties(doc: Any) -> List[PropertySpec]:
    """Properties from a JSON document: one object, a list, or ``{"properties": [...]}``."""
    if isinstance(doc, dict) and 'properties' in doc:
        doc = doc['properties']
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise PropertyFormatError("Property file must hold an object or a list of objects")
    specs = [PropertySpec.from_dict(item) for item in doc]
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise PropertyFormatError(f"Duplicate property ids in {ids}")
    return specs


def dumps_properties(specs: Sequence[PropertySpec]) -> str:
    return json.dumps({'properties': [s.to_dict() for s in specs]}, indent=2)
