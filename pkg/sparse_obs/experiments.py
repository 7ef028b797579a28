"""
Experiment drivers. Each takes a resolved ExperimentConfig and returns a ResultTable.

Replicas are (graph, world, theta) triples; replica r at grid point g uses the seed
derived_seed(cfg.seed, g * cfg.replicas + r). theta-integrated quantities sample
theta ~ U[0, epsilon] per replica and report epsilon times the sample mean.
"""
import logging
import math
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np
from scipy.stats import binom, chisquare, entropy, ks_2samp

from sparse_obs.bp import (bp_marginal, bp_run, boundary_factorized_marginal, cavity_incoming,
                           cavity_marginals, local_update_F, star_of)
from sparse_obs.config import ExperimentConfig
from sparse_obs.density_evolution import de_run
from sparse_obs.errors import InvalidParameterError, NonSoftModelError
from sparse_obs.graph import (EnsembleParams, FactorGraph, neighborhood, neighborhood_shape, residual_edge_frequency,
                              sample_graph, gw_shape_probability, shapes_up_to)
from sparse_obs.io import load_model
from sparse_obs.model import ObservationModel, World, model_softness, sample_world
from sparse_obs.oracle import (ExactPosterior, check_enumerable, conditional_mi, factorization_gap, mutual_information,
                               overlap_variance, pinsker_direction_holds, product_of_marginals, sample_worlds, tv)
from sparse_obs.results import ResultTable, RunningStats, accumulate
from sparse_obs.rng import derived_seed, make_rng
from sparse_obs.workers import fan_out

logger = logging.getLogger(__name__)

MIN_DELTA_THETA = 0.02
MAX_FOREST_ATTEMPTS = 10000
CHI_SQUARE_MIN_EXPECTED = 5.0
DEGREE_TEST_SIGNIFICANCE = 1e-3
# density evolution seeds sit above every graph seed of the same run
DE_SEED_OFFSET = 1 << 40


class Replica(NamedTuple):
    graph: FactorGraph
    world: World
    model: ObservationModel
    theta: float
    rng: np.random.Generator


def _ensemble(cfg: ExperimentConfig, n: int) -> EnsembleParams:
    return EnsembleParams(n, cfg.alpha, cfg.gamma).validate()


def draw_replica(cfg: ExperimentConfig, model: ObservationModel, n: int, seed: int,
                 theta: Optional[float] = None, forest_only: bool = False) -> Replica:
    """
    theta defaults to cfg.theta_override, else U[0, epsilon]. The returned generator is
    left for the caller's own draws (the sampled nodes).
    """
    rng = make_rng(seed)
    if theta is None:
        theta = cfg.theta_override if cfg.theta_override is not None else float(rng.uniform(0.0, cfg.epsilon))
    params = _ensemble(cfg, n)
    for _ in range(MAX_FOREST_ATTEMPTS):
        G = sample_graph(params, int(rng.integers(2 ** 32)))
        if not forest_only or G.is_forest():
            break
    else:
        raise InvalidParameterError(f"No forest among {MAX_FOREST_ATTEMPTS} graphs at n={n}.")
    model = model.with_theta(theta)
    world = sample_world(G, model, int(rng.integers(2 ** 32)))
    return Replica(G, world, model, theta, rng)


def _replica_seeds(cfg: ExperimentConfig, grid_index: int) -> List[int]:
    return [derived_seed(cfg.seed, grid_index * cfg.replicas + r) for r in range(cfg.replicas)]


def _load(cfg: ExperimentConfig) -> ObservationModel:
    return load_model(cfg.model)


# --- Correlation decay ---------------------------------------------------------------------

def b_nk(n: int, k: int) -> float:
    """B_{n,k} = n^k / (k! C(n, k)); the cost of drawing distinct indices."""
    if k > n:
        return math.inf
    return math.exp(k * math.log(n) - math.lgamma(k + 1) - math.log(math.comb(n, k)))


def correlation_bound(q: int, k: int, n: int, h_single: float, epsilon: float) -> float:
    return (q + 1) ** k * math.exp(k * k / (2.0 * n)) * math.sqrt(h_single * epsilon / n)


def intermediate_bound(q: int, k: int, n: int, h_single: float, epsilon: float) -> float:
    return 0.5 * sum(math.comb(k, l) * q ** l * math.sqrt(4.0 * epsilon * b_nk(n, l) * h_single / n)
                     for l in range(2, k + 1))


def exp_correlation_decay(cfg: ExperimentConfig) -> ResultTable:
    """
    For each n: epsilon * E[TV(joint posterior of k distinct random nodes, product of their
    marginals)] next to (|X|+1)^k exp(k^2/2n) sqrt(H(X_1) epsilon / n).
    """
    model = _load(cfg)
    h_single = model.prior.entropy()
    table = ResultTable(['n', 'k', 'epsilon', 'replicas', 'statistic', 'std_error', 'bound',
                         'a_nk', 'a_nk_upper', 'intermediate_bound'])
    for g, n in enumerate(cfg.sizes):
        check_enumerable(model.q, n)
        if cfg.k > n:
            raise InvalidParameterError(f"k={cfg.k} exceeds n={n}.")

        def replica(seed: int) -> float:
            rep = draw_replica(cfg, model, n, seed)
            ids = rep.rng.choice(n, size=cfg.k, replace=False)
            return factorization_gap(rep.graph, rep.model, rep.world, ids)

        stats = accumulate(replica, _replica_seeds(cfg, g), cfg.threads)
        table.add_row(
            n=n, k=cfg.k, epsilon=cfg.epsilon, replicas=cfg.replicas,
            statistic=cfg.epsilon * stats.mean, std_error=cfg.epsilon * stats.std_error,
            bound=correlation_bound(model.q, cfg.k, n, h_single, cfg.epsilon),
            a_nk=math.sqrt(b_nk(n, cfg.k)), a_nk_upper=math.exp(cfg.k ** 2 / (2.0 * n)),
            intermediate_bound=intermediate_bound(model.q, cfg.k, n, h_single, cfg.epsilon),
        )
        logger.info("correlation_decay n=%d: %.4g +- %.2g", n, cfg.epsilon * stats.mean,
                    cfg.epsilon * stats.std_error)
    return table


# --- Mutual information sum and overlap variance -------------------------------------------

def mutual_info_sum(posterior: ExactPosterior) -> float:
    """(1/n) sum over ordered pairs (i, j) of I(X_i; X_j | .), diagonal terms H(X_i | .)."""
    n = posterior.n
    total = 0.0
    for i in range(n):
        total += float(entropy(posterior.marginal(i)))
        for j in range(i + 1, n):
            total += 2.0 * mutual_information(posterior.pair(i, j))
    return total / n


def exp_mutual_info_sum(cfg: ExperimentConfig) -> ResultTable:
    model = _load(cfg)
    bound = 2.0 * model.prior.entropy()
    table = ResultTable(['n', 'epsilon', 'replicas', 'statistic', 'std_error', 'bound'])
    for g, n in enumerate(cfg.sizes):
        check_enumerable(model.q, n)

        def replica(seed: int) -> float:
            rep = draw_replica(cfg, model, n, seed)
            return mutual_info_sum(ExactPosterior(rep.graph, rep.model, rep.world))

        stats = accumulate(replica, _replica_seeds(cfg, g), cfg.threads)
        table.add_row(n=n, epsilon=cfg.epsilon, replicas=cfg.replicas, statistic=cfg.epsilon * stats.mean,
                      std_error=cfg.epsilon * stats.std_error, bound=bound)
        logger.info("mutual_info_sum n=%d: %.4g (bound %.4g)", n, cfg.epsilon * stats.mean, bound)
    return table


def pinsker_failures(posterior: ExactPosterior) -> int:
    """Pairs whose joint and product-of-marginals laws violate sum |p1 - p2|^2 <= 2 KL."""
    failures = 0
    for i in range(posterior.n):
        for j in range(i + 1, posterior.n):
            table = posterior.joint([i, j])
            if not pinsker_direction_holds(table.probs, product_of_marginals(table)):
                failures += 1
    return failures


def exp_overlap_variance(cfg: ExperimentConfig) -> ResultTable:
    model = _load(cfg)
    h_single = model.prior.entropy()
    table = ResultTable(['n', 'symbol', 'epsilon', 'replicas', 'statistic', 'std_error', 'bound',
                         'pinsker_failures'])
    for g, n in enumerate(cfg.sizes):
        check_enumerable(model.q, n)

        def replica(seed: int):
            rep = draw_replica(cfg, model, n, seed)
            posterior = ExactPosterior(rep.graph, rep.model, rep.world)
            variances = [overlap_variance(rep.graph, rep.model, rep.world, xi, posterior=posterior)
                         for xi in range(model.q)]
            return variances, pinsker_failures(posterior)

        results = fan_out(replica, _replica_seeds(cfg, g), cfg.threads)
        failures = sum(r[1] for r in results)
        for xi in range(model.q):
            stats = RunningStats().extend((r[0][xi] for r in results))
            table.add_row(n=n, symbol=xi, epsilon=cfg.epsilon, replicas=cfg.replicas,
                          statistic=cfg.epsilon * stats.mean, std_error=cfg.epsilon * stats.std_error,
                          bound=4.0 * h_single / n, pinsker_failures=failures)
        if failures:
            logger.warning("overlap_variance n=%d: %d pairs fail the Pinsker inequality check", n, failures)
    return table


# --- BP versus exact -----------------------------------------------------------------------

def require_soft(model: ObservationModel) -> None:
    if model.is_flagged_non_soft or math.isinf(model_softness(model)):
        raise NonSoftModelError(f"Model '{model.name}' is not soft; the BP error bound does not apply.")


def exp_bp_vs_exact(cfg: ExperimentConfig) -> ResultTable:
    """
    For each n: epsilon * E tv(mu_i, F_i(exact cavity marginals)) at a random node i, and
    epsilon * E tv(mu_i, boundary-factorized marginal of radius t) for every configured t.
    """
    model = _load(cfg)
    require_soft(model)
    table = ResultTable(['method', 'n', 't', 'epsilon', 'replicas', 'statistic', 'std_error', 'bound'])
    for g, n in enumerate(cfg.sizes):
        check_enumerable(model.q, n)

        def replica(seed: int) -> List[float]:
            rep = draw_replica(cfg, model, n, seed, forest_only=cfg.forest_only)
            i = int(rep.rng.integers(n))
            exact = ExactPosterior(rep.graph, rep.model, rep.world).marginal(i)
            star = star_of(rep.graph, rep.world, i)
            cavity = cavity_marginals(rep.graph, rep.model, rep.world, i, method='oracle')
            gaps = [tv(exact, local_update_F(star, cavity_incoming(star, cavity), rep.model))]
            for t in cfg.t_values:
                gaps.append(tv(exact, boundary_factorized_marginal(rep.graph, rep.model, rep.world, i, t)))
            return gaps

        results = fan_out(replica, _replica_seeds(cfg, g), cfg.threads)
        labels = [('local_update', None)] + [('boundary', t) for t in cfg.t_values]
        for col, (method, t) in enumerate(labels):
            stats = RunningStats().extend((r[col] for r in results))
            table.add_row(method=method, n=n, t=t, epsilon=cfg.epsilon, replicas=cfg.replicas,
                          statistic=cfg.epsilon * stats.mean, std_error=cfg.epsilon * stats.std_error)
        logger.info("bp_vs_exact n=%d done", n)
    return table


# --- Density evolution versus BP -----------------------------------------------------------

def exp_de_match(cfg: ExperimentConfig) -> ResultTable:
    """
    Empirical law of BP marginals on sampled graphs against the population reached by
    density evolution at the same (gamma, alpha, theta), per symbol.
    """
    model = _load(cfg)
    theta = cfg.theta_override if cfg.theta_override is not None else cfg.theta
    model = model.with_theta(theta)
    table = ResultTable(['kind', 'n', 'key', 'statistic', 'std_error', 'bound'])
    for g, n in enumerate(cfg.sizes):
        per_graph = min(cfg.nodes_per_graph, n)

        def bp_graph(seed: int):
            rep = draw_replica(cfg, model, n, seed, theta=theta)
            result = bp_run(rep.graph, rep.model, rep.world, damping=cfg.damping,
                            tol=cfg.bp_tol, max_iter=cfg.bp_max_iter)
            nodes = rep.rng.choice(n, size=per_graph, replace=False)
            return (np.array([bp_marginal(rep.graph, rep.model, rep.world, result.messages, int(i)) for i in nodes]),
                    result.converged)

        seeds = [derived_seed(cfg.seed, g * cfg.graphs + r) for r in range(cfg.graphs)]
        graphs = fan_out(bp_graph, seeds, cfg.threads)
        bp_law = np.concatenate([m for m, _ in graphs])
        nonconverged = sum(1 for _, ok in graphs if not ok)
        if nonconverged:
            logger.warning("de_match n=%d: BP did not converge on %d of %d graphs", n, nonconverged, cfg.graphs)

        pop, history = de_run(model, cfg.n_pop, cfg.iters, derived_seed(cfg.seed, DE_SEED_OFFSET + g),
                              gamma=cfg.gamma, alpha=cfg.alpha, tol=cfg.de_tol, threads=cfg.threads)
        for xi in range(model.q):
            ks = ks_2samp(bp_law[:, xi], pop.messages[:, xi]).statistic
            table.add_row(kind='ks', n=n, key=xi, statistic=float(ks))
        table.add_row(kind='bp_nonconverged', n=n, statistic=nonconverged)
        for summary in history.summaries[1:]:
            table.add_row(kind='de_trace', n=n, key=summary.generation, statistic=summary.ks_to_prev)
        table.add_row(kind='de_stationary_since', n=n, statistic=history.stationary_since)
    return table


# --- Entropy identities --------------------------------------------------------------------

def first_derivative_terms(G: FactorGraph, model: ObservationModel, world: World) -> float:
    """-sum_i H(X_i | Y, Z^(i)): the reveal at i hidden."""
    return -sum(conditional_mi(G, model, world, i, i, mask=[i]) for i in range(G.n))


def second_derivative_terms(G: FactorGraph, model: ObservationModel, world: World) -> float:
    """sum over ordered pairs i != j of I(X_i; X_j | Y, Z^(ij))."""
    total = 0.0
    for i in range(G.n):
        for j in range(i + 1, G.n):
            total += 2.0 * conditional_mi(G, model, world, i, j, mask=[i, j])
    return total


def exp_entropy_identity(cfg: ExperimentConfig) -> ResultTable:
    """
    Centered finite differences in theta of the posterior entropy (common random numbers:
    the same worlds re-revealed at theta - delta, theta, theta + delta) against the
    derivative identities evaluated on those worlds.
    """
    model = _load(cfg)
    theta, delta = cfg.theta, cfg.delta_theta
    if delta < MIN_DELTA_THETA:
        raise InvalidParameterError(f"delta_theta={delta} is below {MIN_DELTA_THETA}; "
                                    f"the finite difference would drown in Monte-Carlo noise.")
    if theta - delta < 0.0 or theta + delta > 1.0:
        raise InvalidParameterError(f"theta +- delta_theta must stay inside [0, 1], got {theta} +- {delta}.")
    table = ResultTable(['identity', 'n', 'theta', 'delta_theta', 'n_worlds', 'statistic', 'std_error',
                         'bound', 'bound_std_error', 'relative_error'])
    for g, n in enumerate(cfg.sizes):
        check_enumerable(model.q, n)
        diff1, rhs1, diff2, rhs2 = RunningStats(), RunningStats(), RunningStats(), RunningStats()
        for r in range(cfg.graphs):
            # graph from the block seed, world w from block + 1 + w
            block = derived_seed(cfg.seed, (g * cfg.graphs + r) * (cfg.n_worlds + 1))
            G = sample_graph(_ensemble(cfg, n), block)
            at = model.with_theta(theta)
            worlds = sample_worlds(G, at, cfg.n_worlds, block + 1)

            def per_world(w: World):
                h = [ExactPosterior(G, at, w.at_theta(th)).entropy() for th in (theta - delta, theta, theta + delta)]
                first = first_derivative_terms(G, at, w)
                second = second_derivative_terms(G, at, w) if cfg.second_derivative else 0.0
                return (h[2] - h[0]) / (2.0 * delta), first, (h[2] - 2.0 * h[1] + h[0]) / delta ** 2, second

            for d1, f1, d2, f2 in fan_out(per_world, worlds, cfg.threads):
                diff1.push(d1)
                rhs1.push(f1)
                diff2.push(d2)
                rhs2.push(f2)

        rows = [('first_derivative', diff1, rhs1)]
        if cfg.second_derivative:
            rows.append(('second_derivative', diff2, rhs2))
        for name, lhs, rhs in rows:
            relative = abs(lhs.mean - rhs.mean) / abs(rhs.mean) if rhs.mean != 0 else abs(lhs.mean)
            table.add_row(identity=name, n=n, theta=theta, delta_theta=delta, n_worlds=cfg.n_worlds * cfg.graphs,
                          statistic=lhs.mean, std_error=lhs.std_error, bound=rhs.mean,
                          bound_std_error=rhs.std_error, relative_error=relative)
            logger.info("entropy_identity n=%d %s: finite difference %.5g, identity %.5g", n, name,
                        lhs.mean, rhs.mean)
    return table


# --- Graph statistics ----------------------------------------------------------------------

def _degree_chi_square(degrees: np.ndarray, m: int, p: float):
    """Chi-square goodness of fit of degrees against Binomial(m, p), tail bins merged."""
    expected_all = binom.pmf(np.arange(m + 1), m, p) * len(degrees)
    observed_all = np.bincount(degrees, minlength=m + 1)
    # cut points close a bin once it expects enough counts; the remainder joins the last bin
    cuts = [0]
    acc = 0.0
    for d in range(m + 1):
        acc += expected_all[d]
        if acc >= CHI_SQUARE_MIN_EXPECTED:
            cuts.append(d + 1)
            acc = 0.0
    if len(cuts) < 3:
        return math.nan, 1.0
    cuts[-1] = m + 1
    observed = np.array([observed_all[lo:hi].sum() for lo, hi in zip(cuts[:-1], cuts[1:])])
    expected = np.array([expected_all[lo:hi].sum() for lo, hi in zip(cuts[:-1], cuts[1:])])
    expected *= observed.sum() / expected.sum()
    result = chisquare(observed, expected)
    return float(result.statistic), float(result.pvalue)


def exp_graph_stats(cfg: ExperimentConfig) -> ResultTable:
    """
    Neighborhood statistics of node 0 over sampled graphs: radius-1 shape frequencies against
    the Galton-Watson law, the tail of |B(0, t)|, edge frequency outside the ball and the
    degree distribution.
    """
    table = ResultTable(['section', 'n', 't', 'key', 'statistic', 'std_error', 'bound'])
    for g, n in enumerate(cfg.sizes):
        params = _ensemble(cfg, n)
        R = cfg.replicas

        def replica(seed: int):
            G = sample_graph(params, seed)
            balls = {t: neighborhood(G, 0, t) for t in cfg.tail_radii}
            return (neighborhood_shape(G, 0, 1), G.var_degree(0),
                    {t: nb.size for t, nb in balls.items()},
                    {t: residual_edge_frequency(G, nb) for t, nb in balls.items()})

        results = fan_out(replica, _replica_seeds(cfg, g), cfg.threads)

        counts: Dict[tuple, int] = {}
        for shape, _, _, _ in results:
            counts[shape] = counts.get(shape, 0) + 1
        for shape in shapes_up_to(cfg.max_shape_nodes, 1):
            p_gw = gw_shape_probability(shape, cfg.gamma, cfg.alpha, 1)
            table.add_row(section='shape', n=n, t=1, key=repr(shape), statistic=counts.get(shape, 0) / R,
                          std_error=math.sqrt(p_gw * (1.0 - p_gw) / R), bound=p_gw)

        for t in cfg.tail_radii:
            sizes = np.array([r[2][t] for r in results])
            ms, logs = [], []
            for M in range(1, cfg.tail_max + 1):
                p = float((sizes >= M).mean())
                table.add_row(section='tail', n=n, t=t, key=M, statistic=p, std_error=math.sqrt(p * (1.0 - p) / R))
                if p > 0 and M > 1:
                    ms.append(M)
                    logs.append(math.log(p))
            if len(ms) >= 2:
                slope = float(np.polyfit(ms, logs, 1)[0])
                table.add_row(section='tail_log_slope', n=n, t=t, statistic=slope)

            present = sum(r[3][t][0] for r in results)
            pairs = sum(r[3][t][1] for r in results)
            if pairs:
                p_edge = params.p_edge
                table.add_row(section='residual_edges', n=n, t=t, key=pairs, statistic=present / pairs,
                              std_error=math.sqrt(p_edge * (1.0 - p_edge) / pairs), bound=p_edge)

        statistic, pvalue = _degree_chi_square(np.array([r[1] for r in results]), params.m, params.p_edge)
        table.add_row(section='degree_chi_square', n=n, key=statistic, statistic=pvalue,
                      bound=DEGREE_TEST_SIGNIFICANCE)
        logger.info("graph_stats n=%d: degree chi-square p-value %.3g", n, pvalue)
    return table


EXPERIMENT_RUNNERS: Dict[str, Callable[[ExperimentConfig], ResultTable]] = {
    'correlation_decay': exp_correlation_decay,
    'mutual_info_sum': exp_mutual_info_sum,
    'overlap_variance': exp_overlap_variance,
    'bp_vs_exact': exp_bp_vs_exact,
    'de_match': exp_de_match,
    'entropy_identity': exp_entropy_identity,
    'graph_stats': exp_graph_stats,
}


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    return EXPERIMENT_RUNNERS[cfg.experiment](cfg)
