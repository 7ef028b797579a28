"""
Brute-force ground truth for small systems: exact posteriors by full enumeration of X^n,
total variation, conditional mutual information, overlap variance and Monte-Carlo
conditional entropies.
"""
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, rel_entr
from scipy.stats import entropy

from sparse_obs.errors import ImpossibleWorldError, InfeasibleSizeError, InvalidParameterError
from sparse_obs.graph import FactorGraph
from sparse_obs.model import ObservationModel, World, sample_world
from sparse_obs.results import RunningStats
from sparse_obs.rng import derived_seed

MAX_ENUMERATION = 2 ** 26


@dataclass(frozen=True, eq=False)
class JointTable:
    """Posterior law of X_U; ``probs`` has one axis per id in ``ids``, in that order."""
    ids: Tuple[int, ...]
    probs: np.ndarray


def check_enumerable(q: int, n_vars: int) -> None:
    if n_vars * math.log(q) > math.log(MAX_ENUMERATION) + 1e-12:
        raise InfeasibleSizeError(f"Enumerating {q}^{n_vars} configurations exceeds the limit of {MAX_ENUMERATION}.")


def log_weight_tensor(q: int, n_vars: int,
                      unary: Iterable[Tuple[int, np.ndarray]],
                      factors: Iterable[Tuple[Sequence[int], np.ndarray]]) -> np.ndarray:
    """
    Sum of log-potentials over X^n_vars. ``unary`` holds (axis, weights over X), ``factors``
    holds (sorted axes, table over X^k). Zero weights become -inf.
    """
    check_enumerable(q, n_vars)
    logw = np.zeros((q,) * n_vars)
    with np.errstate(divide='ignore'):
        for axis, weights in unary:
            shape = [1] * n_vars
            shape[axis] = q
            logw = logw + np.log(weights).reshape(shape)
        for axes, table in factors:
            shape = [1] * n_vars
            for ax in axes:
                shape[ax] = q
            logw = logw + np.log(table).reshape(shape)
    return logw


def normalize_log(logw: np.ndarray) -> np.ndarray:
    """Exponentiate relative to logsumexp and normalize."""
    with np.errstate(divide='ignore'):
        total = logsumexp(logw)
    if not np.isfinite(total):
        raise ImpossibleWorldError("Observations have zero probability under the model (total weight 0).")
    w = np.exp(logw - total)
    return w / w.sum()


class ExactPosterior:
    """Full joint P{X = . | Y, Z(theta)} of one (graph, world) by enumeration."""

    def __init__(self, G: FactorGraph, model: ObservationModel, world: World) -> None:
        world.check(G)
        self.n = G.n
        self.q = model.q
        unary = [(i, model.evidence(world.z[i], world.reveal[i])) for i in range(G.n)]
        factors = []
        for a, members in enumerate(G.adj_fac):
            if members:
                factors.append((members, model.kernel(len(members)).given(world.y[a])))
        self.probs = normalize_log(log_weight_tensor(self.q, G.n, unary, factors))

    def joint(self, ids: Sequence[int]) -> JointTable:
        ids = tuple(int(i) for i in ids)
        if len(set(ids)) != len(ids):
            raise InvalidParameterError(f"Duplicate ids in {ids}.")
        for i in ids:
            if not 0 <= i < self.n:
                raise InvalidParameterError(f"Variable {i} out of range [0, {self.n}).")
        drop = tuple(ax for ax in range(self.n) if ax not in ids)
        marg = self.probs.sum(axis=drop) if drop else self.probs
        order = sorted(ids)
        marg = np.transpose(marg, [order.index(i) for i in ids])
        return JointTable(ids=ids, probs=marg)

    def marginal(self, i: int) -> np.ndarray:
        return self.joint([i]).probs

    def marginals(self) -> np.ndarray:
        """(n, q) array of all one-variable marginals."""
        return np.array([self.marginal(i) for i in range(self.n)]).reshape(self.n, self.q)

    def pair(self, i: int, j: int) -> np.ndarray:
        return self.joint([i, j]).probs

    def entropy(self) -> float:
        """H(X | Y=y, Z(theta)=z) in nats."""
        return float(entropy(self.probs.ravel()))

    def coincidence_matrix(self, xi: int) -> np.ndarray:
        """C[i, j] = P{X_i = xi, X_j = xi}."""
        states = np.indices((self.q,) * self.n).reshape(self.n, -1)
        indicator = (states == xi).astype(float)
        flat = self.probs.ravel()
        return (indicator * flat) @ indicator.T


def posterior_joint(G: FactorGraph, model: ObservationModel, world: World, U: Sequence[int]) -> JointTable:
    """Exact P{X_U = . | Y=y, Z(theta)=(z, reveal)}; U = [i] gives mu_i^theta."""
    return ExactPosterior(G, model, world).joint(U)


def tv(p, r) -> float:
    p = np.asarray(p, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    if p.shape != r.shape:
        raise InvalidParameterError(f"Total variation needs equal support sizes, got {p.size} and {r.size}.")
    return float(0.5 * np.abs(p - r).sum())


def product_of_marginals(table: JointTable) -> np.ndarray:
    k = len(table.ids)
    out = np.ones(())
    for ax in range(k):
        others = tuple(b for b in range(k) if b != ax)
        out = np.multiply.outer(out, table.probs.sum(axis=others) if others else table.probs)
    return out


def factorization_gap(G: FactorGraph, model: ObservationModel, world: World, ids: Sequence[int],
                      posterior: Optional[ExactPosterior] = None) -> float:
    """TV distance between the joint posterior of ``ids`` and the product of their marginals."""
    posterior = posterior or ExactPosterior(G, model, world)
    table = posterior.joint(ids)
    return tv(table.probs, product_of_marginals(table))


def mutual_information(pair: np.ndarray) -> float:
    """I(A; B) in nats from a joint table."""
    outer = np.outer(pair.sum(axis=1), pair.sum(axis=0))
    return float(max(rel_entr(pair, outer).sum(), 0.0))


def conditional_mi(G: FactorGraph, model: ObservationModel, world: World, i: int, j: int,
                   mask: Iterable[int] = (), posterior: Optional[ExactPosterior] = None) -> float:
    """
    I(X_i; X_j | Y=y, Z(theta)=z) in nats. ``mask`` hides the reveals at those ids first.
    For i == j this is the conditional entropy of X_i.
    """
    mask = list(mask)
    if mask:
        posterior = ExactPosterior(G, model, world.masked(mask))
    posterior = posterior or ExactPosterior(G, model, world)
    if i == j:
        return float(entropy(posterior.marginal(i)))
    return mutual_information(posterior.pair(i, j))


def overlap_variance(G: FactorGraph, model: ObservationModel, world: World, xi: int,
                     posterior: Optional[ExactPosterior] = None) -> float:
    """
    Var(Q(xi) | Y, Z(theta)) = (1/n^2) sum_{i,j} (P{X_i=xi, X_j=xi} - P{X_i=xi} P{X_j=xi})^2.
    """
    posterior = posterior or ExactPosterior(G, model, world)
    if posterior.n == 0:
        return 0.0
    coincidence = posterior.coincidence_matrix(xi)
    single = np.diag(coincidence)
    cov = coincidence - np.outer(single, single)
    return float((cov ** 2).sum() / posterior.n ** 2)


def pinsker_direction_holds(p1: np.ndarray, p2: np.ndarray, slack: float = 1e-12) -> bool:
    """sum |p1 - p2|^2 <= 2 KL(p1 || p2)."""
    p1 = np.asarray(p1, dtype=float).ravel()
    p2 = np.asarray(p2, dtype=float).ravel()
    return float(((p1 - p2) ** 2).sum()) <= 2.0 * float(rel_entr(p1, p2).sum()) + slack


def conditional_entropy_samples(G: FactorGraph, model: ObservationModel, theta: float,
                                worlds: Sequence[World]) -> List[float]:
    """Exact posterior entropy of each world, re-revealed at ``theta``."""
    model = model.with_theta(theta)
    return [ExactPosterior(G, model, w.at_theta(theta)).entropy() for w in worlds]


def sample_worlds(G: FactorGraph, model: ObservationModel, n_worlds: int, seed: int) -> List[World]:
    """World r uses seed + r; the reveal uniforms are kept for common random numbers."""
    return [sample_world(G, model, derived_seed(seed, r)) for r in range(n_worlds)]


def conditional_entropy_mc(G: FactorGraph, model: ObservationModel, theta: float, n_worlds: int, seed: int,
                           worlds: Optional[Sequence[World]] = None) -> Tuple[float, float]:
    """
    Monte-Carlo estimate of H(X | Y, Z(theta)) with its standard error. Worlds are sampled
    from ``seed`` (or taken from ``worlds``) and re-revealed at ``theta``, so calls at two
    values of theta with the same seed share their randomness.
    """
    if worlds is None:
        if n_worlds < 2:
            raise InvalidParameterError(f"n_worlds must be at least 2, got {n_worlds}.")
        worlds = sample_worlds(G, model.with_theta(theta), n_worlds, seed)
    elif len(worlds) < 2:
        raise InvalidParameterError(f"At least 2 worlds are needed, got {len(worlds)}.")
    stats = RunningStats()
    for h in conditional_entropy_samples(G, model, theta, worlds):
        stats.push(h)
    return stats.mean, stats.std_error


def decile_calibration(predictions: Sequence[float], outcomes: Sequence[bool],
                       bins: int = 10) -> List[Tuple[float, float, int]]:
    """
    Group predicted probabilities into equal-width bins; returns (mean prediction,
    empirical frequency, count) for every non-empty bin.
    """
    predictions = np.asarray(predictions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    which = np.minimum((predictions * bins).astype(int), bins - 1)
    out = []
    for b in range(bins):
        sel = which == b
        if sel.any():
            out.append((float(predictions[sel].mean()), float(outcomes[sel].mean()), int(sel.sum())))
    return out
