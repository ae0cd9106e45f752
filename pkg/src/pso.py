"""
PSO Module

Particle swarm minimization over real vectors. Used by the fine-tuner on
neuron weights but independent of networks.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import ConfigError, InputShapeError
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

Fitness = Callable[[np.ndarray], float]
Initializer = Callable[[np.random.Generator, int], np.ndarray]


@dataclass
class SwarmConfig:
    """
    Swarm settings. Defaults are the fine-tuning settings: inertia 0.8,
    cognitive and social weights 0.41, 20 particles, 100 iterations.
    """

    omega: float = 0.8
    c1: float = 0.41
    c2: float = 0.41
    particles: int = 20
    max_iters: int = 100
    stagnation_window: int = 10
    bounds: Optional[Tuple[Tuple[float, float], ...]] = None
    max_velocity: Optional[float] = None
    target_fitness: Optional[float] = None
    init_spread: float = 0.1
    init_floor: float = 0.01
    seed: int = 42
    log_every: int = 10

    def __post_init__(self):
        if min(self.omega, self.c1, self.c2) < 0:
            raise ConfigError("omega, c1 and c2 must be non-negative")
        if self.particles < 2:
            raise ConfigError(f"A swarm needs at least 2 particles, got {self.particles}")
        if self.max_iters < 1 or self.stagnation_window < 1:
            raise ConfigError("max_iters and stagnation_window must be positive")
        if self.max_velocity is not None and self.max_velocity <= 0:
            raise ConfigError("max_velocity must be positive")
        if self.bounds is not None:
            self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            if any(lo > hi for lo, hi in self.bounds):
                raise ConfigError("Every bound needs lower <= upper")

    def clamp(self, positions: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return positions
        if len(self.bounds) != positions.shape[-1]:
            raise InputShapeError(f"bounds cover {len(self.bounds)} dimensions, positions have {positions.shape[-1]}")
        lo, hi = np.array(self.bounds).T
        return np.clip(positions, lo, hi)


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    personal_best: np.ndarray
    personal_best_fitness: np.ndarray
    global_best: np.ndarray
    global_best_fitness: float
    fitness: np.ndarray
    rng: np.random.Generator
    iteration: int = 0

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass
class OptimizeResult:
    position: np.ndarray
    fitness: float
    iterations: int
    history: List[Dict[str, float]] = field(default_factory=list)
    stop_reason: str = 'max_iters'


def _evaluate(fitness: Fitness, positions: np.ndarray, threads: int) -> np.ndarray:
    values = np.array(ordered_map(lambda p: float(fitness(p)), list(positions), threads), dtype=np.float64)
    return np.where(np.isfinite(values), values, np.inf)


def initial_positions(init: np.ndarray, cfg: SwarmConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Particle 0 at ``init``; the rest Gaussian-perturbed around it with
    ``sigma = max(init_spread * |x|, init_floor)`` per coordinate.
    """
    init = np.asarray(init, dtype=np.float64)
    sigma = np.maximum(cfg.init_spread * np.abs(init), cfg.init_floor)
    positions = init + rng.normal(size=(cfg.particles, init.size)) * sigma
    positions[0] = init
    return positions


def init_swarm(fitness: Fitness, dim: int, init: Union[None, Sequence[float], np.ndarray, Initializer],
               cfg: SwarmConfig, threads: int = 1) -> SwarmState:
    """
    Build the starting swarm with zero velocities.

    Args:
        fitness: Function to minimize
        dim (int): Search dimension
        init: One start vector (perturbed into a swarm), a full (particles, dim)
            array, a callable ``(rng, particles) -> array``, or None for the origin
        cfg (SwarmConfig): Settings
        threads (int): Worker threads for fitness evaluation

    Returns:
        SwarmState: Iteration 0
    """
    if dim < 1:
        raise ConfigError(f"dim must be positive, got {dim}")
    rng = np.random.default_rng(cfg.seed)
    if callable(init):
        positions = np.asarray(init(rng, cfg.particles), dtype=np.float64)
    elif init is None:
        positions = initial_positions(np.zeros(dim), cfg, rng)
    else:
        arr = np.asarray(init, dtype=np.float64)
        positions = initial_positions(arr, cfg, rng) if arr.ndim == 1 else arr.copy()
    if positions.shape != (cfg.particles, dim):
        raise InputShapeError(f"Initial positions must have shape {(cfg.particles, dim)}, got {positions.shape}")
    positions = cfg.clamp(positions)
    values = _evaluate(fitness, positions, threads)
    best = int(np.argmin(values))
    return SwarmState(positions=positions, velocities=np.zeros_like(positions),
                      personal_best=positions.copy(), personal_best_fitness=values.copy(),
                      global_best=positions[best].copy(), global_best_fitness=float(values[best]),
                      fitness=values, rng=rng)


def step(state: SwarmState, cfg: SwarmConfig, fitness: Fitness, threads: int = 1) -> SwarmState:
    """
    One swarm update.

    ``v <- omega v + R(0, c1)(p_i - x) + R(0, c2)(p_g - x)``, then ``x <- x + v``.
    The random factors are drawn per particle and dimension. Personal and
    global bests move only on strict improvement; non-finite fitness counts
    as infinity.

    Args:
        state (SwarmState): Current swarm
        cfg (SwarmConfig): Settings
        fitness: Function to minimize
        threads (int): Worker threads for fitness evaluation

    Returns:
        SwarmState: The next swarm; ``state`` is left untouched except its generator
    """
    shape = state.positions.shape
    r1 = state.rng.uniform(0.0, cfg.c1, size=shape)
    r2 = state.rng.uniform(0.0, cfg.c2, size=shape)
    velocities = (cfg.omega * state.velocities
                  + r1 * (state.personal_best - state.positions)
                  + r2 * (state.global_best[None, :] - state.positions))
    if cfg.max_velocity is not None:
        velocities = np.clip(velocities, -cfg.max_velocity, cfg.max_velocity)
    positions = cfg.clamp(state.positions + velocities)
    values = _evaluate(fitness, positions, threads)

    improved = values < state.personal_best_fitness
    personal_best = np.where(improved[:, None], positions, state.personal_best)
    personal_best_fitness = np.where(improved, values, state.personal_best_fitness)

    global_best, global_best_fitness = state.global_best, state.global_best_fitness
    leader = int(np.argmin(personal_best_fitness))
    if personal_best_fitness[leader] < global_best_fitness:
        global_best, global_best_fitness = personal_best[leader].copy(), float(personal_best_fitness[leader])

    return replace(state, positions=positions, velocities=velocities, personal_best=personal_best,
                   personal_best_fitness=personal_best_fitness, global_best=global_best,
                   global_best_fitness=global_best_fitness, fitness=values, iteration=state.iteration + 1)


def _record(state: SwarmState) -> Dict[str, float]:
    finite = state.fitness[np.isfinite(state.fitness)]
    return {'iteration': state.iteration, 'best_fitness': state.global_best_fitness,
            'mean_fitness': float(finite.mean()) if finite.size else math.inf}


def optimize(fitness: Fitness, dim: int, init=None, cfg: Optional[SwarmConfig] = None,
             callback: Optional[Callable[[SwarmState], bool]] = None, threads: int = 1) -> OptimizeResult:
    """
    Minimize ``fitness`` with a particle swarm.

    Stops after ``max_iters`` steps, after ``stagnation_window`` consecutive
    steps without a global-best improvement, once ``target_fitness`` is
    reached, or when ``callback(state)`` returns True.

    Args:
        fitness: Function to minimize, must be pure when ``threads > 1``
        dim (int): Search dimension
        init: See :func:`init_swarm`
        cfg (Optional[SwarmConfig]): Settings, defaults when omitted
        callback: Called after every step with the new state
        threads (int): Worker threads for fitness evaluation

    Returns:
        OptimizeResult: Best-ever position and fitness, steps taken, per-step history
    """
    cfg = cfg or SwarmConfig()
    state = init_swarm(fitness, dim, init, cfg, threads)
    history = [_record(state)]
    stagnant = 0
    reason = 'max_iters'
    if cfg.target_fitness is not None and state.global_best_fitness <= cfg.target_fitness:
        return OptimizeResult(state.global_best.copy(), state.global_best_fitness, 0, history, 'target')

    while state.iteration < cfg.max_iters:
        previous = state.global_best_fitness
        state = step(state, cfg, fitness, threads)
        history.append(_record(state))
        stagnant = 0 if state.global_best_fitness < previous else stagnant + 1
        if cfg.log_every and state.iteration % cfg.log_every == 0:
            logger.info(f"Swarm iteration {state.iteration}: best fitness {state.global_best_fitness:.6g}")
        if cfg.target_fitness is not None and state.global_best_fitness <= cfg.target_fitness:
            reason = 'target'
            break
        if stagnant >= cfg.stagnation_window:
            reason = 'stagnation'
            break
        if callback is not None and callback(state):
            reason = 'callback'
            break

    logger.info(f"Swarm stopped ({reason}) after {state.iteration} iterations, "
                f"best fitness {state.global_best_fitness:.6g}")
    return OptimizeResult(state.global_best.copy(), state.global_best_fitness, state.iteration, history, reason)
