import math
import unittest

import numpy as np

from sparse_obs.density_evolution import CHUNK_SIZE, HISTOGRAM_BINS, Population, calibration_gap, de_init, de_run, \
    de_step, pair_consistency, population_distance, population_stats
from sparse_obs.errors import InvalidParameterError
from sparse_obs.model import builtin_model
from sparse_obs.results import RunningStats


def population(x, messages, generation=0):
    return Population(x=np.asarray(x), messages=np.asarray(messages, dtype=float), gamma=0.0, alpha=0.0, theta=0.0,
                      generation=generation)


class DEInitTest(unittest.TestCase):

    def test_all_revealed(self):
        model = builtin_model('group_testing', {'f': 0.05, 'theta': 1.0})
        pop = de_init(model, 500, seed=1)
        np.testing.assert_array_equal(np.eye(2)[pop.x], pop.messages)

    def test_trivial_side_channel(self):
        model = builtin_model('group_testing', {'f': 0.05, 'prior': 0.3})
        pop = de_init(model, 200, seed=1)
        np.testing.assert_allclose(np.tile([0.7, 0.3], (200, 1)), pop.messages, atol=1e-15)

    def test_bsc_two_point_law(self):
        model = builtin_model('parity_bsc', {'p': 0.1, 'r': 0.1})
        pop = de_init(model, 4000, seed=2)
        high = np.isclose(pop.messages[:, 0], 0.9)
        low = np.isclose(pop.messages[:, 0], 0.1)
        self.assertTrue(np.all(high | low))
        self.assertLess(abs(high.mean() - 0.5), 4 * math.sqrt(0.25 / 4000))

    def test_invalid(self):
        model = builtin_model('group_testing', {'f': 0.05})
        with self.assertRaises(InvalidParameterError):
            de_init(model, 0, seed=1)
        with self.assertRaises(InvalidParameterError):
            de_init(model, 10, seed=1, gamma=-1.0)


class DEStepTest(unittest.TestCase):

    def test_no_factors(self):
        model = builtin_model('group_testing', {'f': 0.05, 'prior': 0.3})
        pop = de_step(de_init(model, 300, seed=1, gamma=0.0, alpha=0.5), model, seed=2)
        self.assertEqual(1, pop.generation)
        np.testing.assert_allclose(np.tile([0.7, 0.3], (300, 1)), pop.messages, atol=1e-15)

    def test_point_masses_propagate(self):
        model = builtin_model('group_testing', {'f': 0.05, 'theta': 1.0})
        pop = de_step(de_init(model, 500, seed=1, gamma=2.0, alpha=0.5), model, seed=3)
        np.testing.assert_allclose(np.eye(2)[pop.x], pop.messages, atol=1e-15)

    def test_calibration(self):
        model = builtin_model('group_testing', {'f': 0.05})
        pop = de_step(de_init(model, 4000, seed=4, gamma=2.0, alpha=0.5), model, seed=5)
        stats = RunningStats().extend(pop.messages[:, 1])
        self.assertLess(abs(stats.mean - 0.5), 4 * stats.std_error)
        self.assertLess(calibration_gap(pop, model.prior.probs), 4 * stats.std_error)

    def test_threads_do_not_change_result(self):
        model = builtin_model('parity_bsc', {'p': 0.1, 'theta': 0.2})
        start = de_init(model, 2 * CHUNK_SIZE + 17, seed=6, gamma=2.0, alpha=0.5)
        serial = de_step(start, model, seed=7)
        threaded = de_step(start, model, seed=7, threads=3)
        np.testing.assert_array_equal(serial.x, threaded.x)
        np.testing.assert_array_equal(serial.messages, threaded.messages)

    def test_alphabet_mismatch(self):
        model = builtin_model('group_testing', {'f': 0.05})
        pop = population([0], [[0.2, 0.3, 0.5]])
        with self.assertRaises(InvalidParameterError):
            de_step(pop, model, seed=1)


class DERunTest(unittest.TestCase):

    def test_zero_iterations(self):
        model = builtin_model('group_testing', {'f': 0.05, 'r': 0.1})
        pop, history = de_run(model, 300, 0, seed=9, gamma=2.0, alpha=0.5)
        np.testing.assert_array_equal(de_init(model, 300, seed=9).messages, pop.messages)
        self.assertEqual(1, len(history.summaries))
        self.assertFalse(history.is_stationary)

    def test_all_revealed_stationary(self):
        model = builtin_model('group_testing', {'f': 0.05, 'theta': 1.0})
        _, history = de_run(model, 4000, 4, seed=2, gamma=2.0, alpha=0.5, tol=0.05)
        self.assertEqual(1, history.stationary_since)
        self.assertEqual([0, 1, 2, 3, 4], [s.generation for s in history.summaries])

    def test_tracked_functionals(self):
        model = builtin_model('group_testing', {'f': 0.05})

        def mean_one(pop):
            return pop.messages[:, 1].mean()

        _, history = de_run(model, 200, 2, seed=3, track=[mean_one], gamma=2.0, alpha=0.5)
        self.assertTrue(all('mean_one' in s.tracked for s in history.summaries))
        self.assertIsNone(history.summaries[0].ks_to_prev)
        self.assertIsNotNone(history.summaries[2].ks_to_prev)

    def test_negative_iterations(self):
        with self.assertRaises(InvalidParameterError):
            de_run(builtin_model('group_testing', {'f': 0.05}), 10, -1, seed=0)


class PopulationStatsTest(unittest.TestCase):

    def test_point_masses_at_truth(self):
        x = [0, 1, 1, 0]
        summary = population_stats(population(x, np.eye(2)[x]))
        self.assertEqual(0.0, summary.error_proxy)
        self.assertEqual(0.0, summary.mean_entropy)

    def test_uniform_messages(self):
        summary = population_stats(population([0, 1, 2], np.full((3, 3), 1.0 / 3.0)))
        self.assertAlmostEqual(math.log(3.0), summary.mean_entropy, places=12)
        self.assertAlmostEqual(2.0 / 3.0, summary.error_proxy, places=12)

    def test_histogram_of_two_point_law(self):
        model = builtin_model('parity_bsc', {'p': 0.1, 'r': 0.1})
        summary = population_stats(de_init(model, 1000, seed=2))
        self.assertEqual((2, HISTOGRAM_BINS), summary.histogram.shape)
        near = summary.histogram[:, 8:12].sum(axis=1) + summary.histogram[:, 88:92].sum(axis=1)
        np.testing.assert_allclose([1.0, 1.0], near, atol=1e-12)


class PopulationDistanceTest(unittest.TestCase):

    def test_identical(self):
        model = builtin_model('parity_bsc', {'p': 0.1, 'r': 0.1})
        pop = de_init(model, 500, seed=1)
        self.assertEqual(0.0, population_distance(pop, pop))

    def test_opposite_point_masses(self):
        zeros = population([0] * 10, np.tile([1.0, 0.0], (10, 1)))
        ones = population([1] * 10, np.tile([0.0, 1.0], (10, 1)))
        self.assertEqual(1.0, population_distance(zeros, ones))
        self.assertEqual(population_distance(ones, zeros), population_distance(zeros, ones))

    def test_independent_draws(self):
        model = builtin_model('parity_bsc', {'p': 0.1, 'r': 0.1})
        d = population_distance(de_init(model, 10000, seed=1), de_init(model, 10000, seed=2))
        self.assertLessEqual(d, 0.03)

    def test_alphabet_mismatch(self):
        with self.assertRaises(InvalidParameterError):
            population_distance(np.full((3, 2), 0.5), np.full((3, 3), 1.0 / 3.0))


class PairConsistencyTest(unittest.TestCase):

    def test_point_masses(self):
        x = [0, 1, 1, 0, 1]
        bins = pair_consistency(population(x, np.eye(2)[x]), 1)
        self.assertEqual([(0.0, 0.0, 2), (1.0, 1.0, 3)], bins)
