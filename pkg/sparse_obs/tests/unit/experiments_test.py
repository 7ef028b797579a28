import math
import unittest

import numpy as np
from scipy.stats import binom

from sparse_obs.config import config_from_dict
from sparse_obs.errors import InfeasibleSizeError, InvalidParameterError, NonSoftModelError
from sparse_obs.experiments import _degree_chi_square, b_nk, correlation_bound, draw_replica, \
    first_derivative_terms, intermediate_bound, mutual_info_sum, run_experiment
from sparse_obs.graph import FactorGraph
from sparse_obs.io import load_model
from sparse_obs.model import builtin_model, sample_world
from sparse_obs.oracle import ExactPosterior

NOISY_OR = {'Q': {'builtin': 'group_testing', 'params': {'f': 0.05}}}


class BoundsTest(unittest.TestCase):

    def test_b_nk(self):
        self.assertAlmostEqual(1.0, b_nk(10, 1), places=12)
        self.assertAlmostEqual(10.0 / 9.0, b_nk(10, 2), places=12)
        self.assertEqual(math.inf, b_nk(3, 4))
        # sqrt(B_nk) never exceeds exp(k^2 / 2n)
        for n in (6, 8, 12):
            for k in (2, 3):
                self.assertLessEqual(math.sqrt(b_nk(n, k)), math.exp(k * k / (2.0 * n)))

    def test_correlation_bound(self):
        expected = 9.0 * math.exp(4.0 / 12.0) * math.sqrt(math.log(2.0) * 0.3 / 6.0)
        self.assertAlmostEqual(expected, correlation_bound(2, 2, 6, math.log(2.0), 0.3), places=12)
        self.assertLess(intermediate_bound(2, 2, 6, math.log(2.0), 0.3), correlation_bound(2, 2, 6, math.log(2.0), 0.3))

    def test_degree_chi_square(self):
        m, p, total = 20, 0.05, 1000
        counts = np.round(binom.pmf(np.arange(m + 1), m, p) * total).astype(int)
        degrees = np.repeat(np.arange(m + 1), counts)
        _, pvalue = _degree_chi_square(degrees, m, p)
        self.assertGreater(pvalue, 0.5)
        _, pvalue = _degree_chi_square(np.full(total, 3), m, p)
        self.assertLess(pvalue, 1e-3)


class IdentityTermsTest(unittest.TestCase):

    def test_mutual_info_sum_of_independent_nodes(self):
        model = builtin_model('parity_bsc', {'p': 0.1})
        G = FactorGraph(3, 0)
        posterior = ExactPosterior(G, model, sample_world(G, model, 1))
        self.assertAlmostEqual(math.log(2.0), mutual_info_sum(posterior), places=12)

    def test_first_derivative_terms(self):
        model = builtin_model('parity_bsc', {'p': 0.1}).with_theta(1.0)
        G = FactorGraph(2, 0)
        # every reveal is hidden in its own term, so each node contributes H(prior)
        self.assertAlmostEqual(-2.0 * math.log(2.0), first_derivative_terms(G, model, sample_world(G, model, 1)),
                               places=12)


class ExperimentRunTest(unittest.TestCase):

    def config(self, experiment, **overrides):
        return config_from_dict(dict(overrides, experiment=experiment), experiment)

    def test_draw_replica(self):
        cfg = self.config('correlation_decay', model=NOISY_OR, sizes=[6])
        model = load_model(NOISY_OR)
        a = draw_replica(cfg, model, 6, seed=4)
        b = draw_replica(cfg, model, 6, seed=4)
        self.assertEqual(a.graph, b.graph)
        self.assertEqual(a.theta, b.theta)
        self.assertTrue(0.0 <= a.theta <= cfg.epsilon)
        fixed = self.config('correlation_decay', model=NOISY_OR, theta_override=0.25)
        self.assertEqual(0.25, draw_replica(fixed, model, 6, seed=4).model.theta)

    def test_correlation_decay(self):
        table = run_experiment(self.config('correlation_decay', sizes=[4, 6], replicas=6))
        self.assertEqual([4, 6], table.column('n'))
        for row in table.rows:
            self.assertGreaterEqual(row['statistic'], 0.0)
            self.assertLessEqual(row['a_nk'], row['a_nk_upper'])

    def test_correlation_decay_too_large(self):
        with self.assertRaises(InfeasibleSizeError):
            run_experiment(self.config('correlation_decay', sizes=[30], replicas=2))

    def test_mutual_info_and_overlap(self):
        table = run_experiment(self.config('mutual_info_sum', sizes=[4], replicas=4))
        self.assertEqual(1, len(table))
        self.assertAlmostEqual(2.0 * math.log(2.0), table.rows[0]['bound'])
        table = run_experiment(self.config('overlap_variance', sizes=[4], replicas=4))
        self.assertEqual([0, 1], table.column('symbol'))
        self.assertEqual(0, table.rows[0]['pinsker_failures'])

    def test_bp_vs_exact_on_forests(self):
        table = run_experiment(self.config('bp_vs_exact', sizes=[6], replicas=5, t_values=[1, 2], forest_only=True))
        self.assertEqual(['local_update', 'boundary', 'boundary'], table.column('method'))
        for row in table.rows:
            self.assertLess(row['statistic'], 1e-9)

    def test_bp_vs_exact_refuses_hard_models(self):
        hard = {'Q': {'builtin': 'mod2_storage'}}
        with self.assertRaises(NonSoftModelError):
            run_experiment(self.config('bp_vs_exact', model=hard, sizes=[4], replicas=2))

    def test_de_match(self):
        cfg = self.config('de_match', sizes=[40], graphs=2, nodes_per_graph=10, n_pop=200, min_population=100, iters=3)
        table = run_experiment(cfg)
        self.assertEqual(['ks', 'ks', 'bp_nonconverged', 'de_trace', 'de_trace', 'de_trace', 'de_stationary_since'],
                         table.column('kind'))
        self.assertIn(table.where(kind='bp_nonconverged')[0]['statistic'], (0, 1, 2))

    def test_entropy_identity(self):
        table = run_experiment(self.config('entropy_identity', sizes=[4], n_worlds=10, second_derivative=True))
        self.assertEqual(['first_derivative', 'second_derivative'], table.column('identity'))
        first = table.rows[0]
        self.assertLess(first['bound'], 0.0)
        self.assertTrue(math.isfinite(first['statistic']))

    def test_entropy_identity_guards(self):
        with self.assertRaises(InvalidParameterError):
            run_experiment(self.config('entropy_identity', sizes=[4], n_worlds=2, delta_theta=0.01))
        with self.assertRaises(InvalidParameterError):
            run_experiment(self.config('entropy_identity', sizes=[4], n_worlds=2, theta=0.98))

    def test_graph_stats(self):
        table = run_experiment(self.config('graph_stats', sizes=[60], replicas=40, tail_max=8))
        sections = set(table.column('section'))
        self.assertEqual({'shape', 'tail', 'tail_log_slope', 'residual_edges', 'degree_chi_square'}, sections)
        shapes = table.where(section='shape')
        self.assertEqual(4, len(shapes))
        self.assertAlmostEqual(math.exp(-1.0), shapes[0]['bound'], places=12)
        tail = [row['statistic'] for row in table.where(section='tail', t=1)]
        self.assertEqual(1.0, tail[0])
        self.assertEqual(sorted(tail, reverse=True), tail)
