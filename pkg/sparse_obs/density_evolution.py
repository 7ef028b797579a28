"""
Population dynamics for the density evolution recursion on the Galton-Watson tree.

A population is a list of (true symbol, message) pairs. One step builds every new element
from a fresh local star: the root gets Poisson(gamma*alpha) factors, each with
Poisson(gamma) slots filled by elements drawn from the previous population. The stored
symbols of those elements drive the sampled observation, their messages enter the local
update map.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import entropy, ks_2samp

from sparse_obs.bp import LocalStar, local_update_F
from sparse_obs.errors import InvalidParameterError
from sparse_obs.model import HIDDEN, ObservationModel, draw_columns
from sparse_obs.oracle import decile_calibration
from sparse_obs.rng import derived_seed, make_rng
from sparse_obs.workers import fan_out

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 100
CHUNK_SIZE = 1024
# Seed offset between generations; chunk seeds of one generation stay below it.
GENERATION_SEED_STRIDE = 1 << 20
STATIONARY_STREAK = 3
DEFAULT_STATIONARY_TOL = 0.02
EXPERIMENT_MIN_POPULATION = 1000


@dataclass(frozen=True, eq=False)
class Population:
    x: np.ndarray
    messages: np.ndarray
    gamma: float
    alpha: float
    theta: float
    generation: int = 0

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def q(self) -> int:
        return self.messages.shape[1]


@dataclass(frozen=True, eq=False)
class PopulationSummary:
    generation: int
    mean_message: np.ndarray
    mean_entropy: float
    error_proxy: float
    histogram: np.ndarray
    ks_to_prev: Optional[float] = None
    tracked: Dict[str, float] = field(default_factory=dict)


@dataclass
class DEHistory:
    summaries: List[PopulationSummary]
    tol: float
    stationary_since: Optional[int] = None

    @property
    def is_stationary(self) -> bool:
        return self.stationary_since is not None


def zero_factor_messages(model: ObservationModel, z: np.ndarray, reveal: np.ndarray) -> np.ndarray:
    """Rows proportional to p(x) R(z|x) restricted to the revealed symbol where there is one."""
    w = model.prior.probs[None, :] * model.R.table[z]
    revealed = reveal != HIDDEN
    if revealed.any():
        point = np.zeros_like(w)
        point[np.nonzero(revealed)[0], reveal[revealed]] = 1.0
        w = np.where(revealed[:, None], w * point, w)
    return w / w.sum(axis=1, keepdims=True)


def de_init(model: ObservationModel, N_pop: int, seed: int, gamma: float = 0.0, alpha: float = 0.0) -> Population:
    """
    Generation 0: x from the prior, z ~ R(.|x), revealed w.p. theta, message the zero-factor
    posterior. ``gamma`` and ``alpha`` are stored for the following steps.
    """
    if N_pop < 1:
        raise InvalidParameterError(f"N_pop must be at least 1, got {N_pop}.")
    if gamma < 0 or alpha < 0:
        raise InvalidParameterError(f"gamma and alpha must be non-negative, got {gamma}, {alpha}.")
    rng = make_rng(seed)
    x = rng.choice(model.q, size=N_pop, p=model.prior.probs)
    z = draw_columns(model.R.table[:, x], rng.random(N_pop))
    reveal = np.where(rng.random(N_pop) < model.theta, x, HIDDEN)
    messages = zero_factor_messages(model, z, reveal)
    return Population(x=x, messages=messages, gamma=gamma, alpha=alpha, theta=model.theta)


def _fresh_element(pop: Population, model: ObservationModel, rng: np.random.Generator) -> Tuple[int, np.ndarray]:
    x0 = int(rng.choice(model.q, p=model.prior.probs))
    factors = []
    for _ in range(rng.poisson(pop.gamma * pop.alpha)):
        picks = rng.integers(pop.size, size=rng.poisson(pop.gamma))
        kernel = model.kernel(len(picks) + 1)
        column = kernel.table[(slice(None), x0) + tuple(int(v) for v in pop.x[picks])]
        y = int(draw_columns(column[:, None], rng.random(1))[0])
        factors.append((y, picks))
    z0 = int(draw_columns(model.R.table[:, [x0]], rng.random(1))[0])
    reveal = x0 if rng.random() < model.theta else HIDDEN
    star = LocalStar(z0, reveal)
    incoming = []
    for y, picks in factors:
        star.add_factor(y, range(len(picks)))
        incoming.append(list(pop.messages[picks]))
    return x0, local_update_F(star, incoming, model)


def de_step(pop: Population, model: ObservationModel, seed: int, threads: int = 1) -> Population:
    """
    One generation. Elements are produced in fixed chunks, chunk c drawing from
    derived_seed(seed, c), so the result does not depend on ``threads``.
    """
    if pop.q != model.q:
        raise InvalidParameterError(f"Population alphabet {pop.q} does not match model alphabet {model.q}.")
    model = model.with_theta(pop.theta)
    starts = list(range(0, pop.size, CHUNK_SIZE))

    def run_chunk(c: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = make_rng(derived_seed(seed, c))
        count = min(CHUNK_SIZE, pop.size - starts[c])
        elements = [_fresh_element(pop, model, rng) for _ in range(count)]
        return np.array([e[0] for e in elements]), np.array([e[1] for e in elements]).reshape(count, model.q)

    chunks = fan_out(run_chunk, range(len(starts)), threads)
    x = np.concatenate([c[0] for c in chunks])
    messages = np.concatenate([c[1] for c in chunks])
    return Population(x=x, messages=messages, gamma=pop.gamma, alpha=pop.alpha, theta=pop.theta,
                      generation=pop.generation + 1)


def population_stats(pop: Population, ks_to_prev: Optional[float] = None,
                     tracked: Optional[Dict[str, float]] = None) -> PopulationSummary:
    histogram = np.array([
        np.histogram(pop.messages[:, xi], bins=HISTOGRAM_BINS, range=(0.0, 1.0))[0] / pop.size
        for xi in range(pop.q)
    ])
    truth = pop.messages[np.arange(pop.size), pop.x]
    return PopulationSummary(
        generation=pop.generation,
        mean_message=pop.messages.mean(axis=0),
        mean_entropy=float(entropy(pop.messages, axis=1).mean()),
        error_proxy=float((1.0 - truth).mean()),
        histogram=histogram,
        ks_to_prev=ks_to_prev,
        tracked=dict(tracked or {}),
    )


def population_distance(p1, p2) -> float:
    """Largest two-sample Kolmogorov-Smirnov statistic over the components nu(xi)."""
    m1 = p1.messages if isinstance(p1, Population) else np.asarray(p1)
    m2 = p2.messages if isinstance(p2, Population) else np.asarray(p2)
    if m1.shape[1] != m2.shape[1]:
        raise InvalidParameterError(f"Alphabet sizes differ: {m1.shape[1]} and {m2.shape[1]}.")
    return float(max(ks_2samp(m1[:, xi], m2[:, xi]).statistic for xi in range(m1.shape[1])))


def calibration_gap(pop: Population, prior: np.ndarray) -> float:
    """max over xi of |mean nu(xi) - p(xi)|; zero in expectation for a calibrated population."""
    return float(np.abs(pop.messages.mean(axis=0) - np.asarray(prior)).max())


def pair_consistency(pop: Population, xi: int, bins: int = 10) -> List[Tuple[float, float, int]]:
    """Binned nu(xi) against the frequency of x = xi among the elements in each bin."""
    return decile_calibration(pop.messages[:, xi], pop.x == xi, bins=bins)


def de_run(model: ObservationModel, N_pop: int, iters: int, seed: int,
           track: Sequence[Callable[[Population], float]] = (),
           gamma: float = 0.0, alpha: float = 0.0, tol: float = DEFAULT_STATIONARY_TOL,
           threads: int = 1) -> Tuple[Population, DEHistory]:
    """
    Iterate de_step ``iters`` times from de_init. The history holds one summary per
    generation (0 included) with any ``track`` functionals evaluated on it. The run is
    declared stationary from the first generation g such that the distances to the
    previous generation at g, g+1 and g+2 are all at most ``tol``.
    """
    if iters < 0:
        raise InvalidParameterError(f"iters must be non-negative, got {iters}.")

    def tracked(p: Population) -> Dict[str, float]:
        return {getattr(fn, '__name__', f'track_{k}'): float(fn(p)) for k, fn in enumerate(track)}

    pop = de_init(model, N_pop, seed, gamma=gamma, alpha=alpha)
    history = DEHistory(summaries=[population_stats(pop, tracked=tracked(pop))], tol=tol)
    streak = 0
    for g in range(1, iters + 1):
        nxt = de_step(pop, model, derived_seed(seed, g * GENERATION_SEED_STRIDE), threads=threads)
        ks = population_distance(pop, nxt)
        pop = nxt
        summary = population_stats(pop, ks_to_prev=ks, tracked=tracked(pop))
        history.summaries.append(summary)
        logger.debug("DE generation %d: KS to previous %.4f, mean entropy %.4f", g, ks, summary.mean_entropy)
        streak = streak + 1 if ks <= tol else 0
        if streak == STATIONARY_STREAK and history.stationary_since is None:
            history.stationary_since = g - STATIONARY_STREAK + 1
            logger.info("DE population stationary since generation %d", history.stationary_since)
    return pop, history
