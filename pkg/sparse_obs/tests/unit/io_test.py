import csv
import json
import os
import tempfile
import unittest

import numpy as np

from sparse_obs.bp import bp_run
from sparse_obs.density_evolution import de_init, de_run
from sparse_obs.errors import InvalidParameterError, ModelValidationError
from sparse_obs.graph import EnsembleParams, sample_graph
from sparse_obs.io import dump_messages_csv, load_model, model_from_json, model_to_json, read_population_csv, \
    read_world, world_from_json, write_history_csv, write_marginals_csv, write_population_csv, write_world
from sparse_obs.model import HIDDEN, sample_world

EXPLICIT_MODEL = {
    'prior': [0.6, 0.4],
    'theta': 0.2,
    'R': [[0.8, 0.3], [0.2, 0.7]],
    'Q': {
        '1': [[0.9, 0.2], [0.1, 0.8]],
        '2': [[[0.9, 0.5], [0.5, 0.1]], [[0.1, 0.5], [0.5, 0.9]]],
    },
}


class ModelJsonTest(unittest.TestCase):

    def test_builtin(self):
        model = model_from_json({'Q': {'builtin': 'group_testing', 'params': {'f': 0.05}}, 'theta': 0.1})
        self.assertEqual('group_testing', model.name)
        self.assertEqual(0.1, model.theta)
        self.assertAlmostEqual(0.95, model.kernel(3).likelihood(1, (0, 1, 0)))

    def test_builtin_with_side_channel(self):
        model = model_from_json({'Q': {'builtin': 'parity_bsc', 'params': {'p': 0.1}}, 'R': [[0.7, 0.3], [0.3, 0.7]]})
        self.assertEqual(2, model.R.s)

    def test_explicit(self):
        model = model_from_json(EXPLICIT_MODEL)
        self.assertEqual(2, model.q)
        self.assertEqual([1, 2], list(model.Q))
        self.assertAlmostEqual(0.5, model.kernel(2).likelihood(1, (0, 1)))

    def test_explicit_round_trip(self):
        model = model_from_json(EXPLICIT_MODEL)
        again = model_from_json(json.loads(json.dumps(model_to_json(model))))
        np.testing.assert_array_equal(model.kernel(2).table, again.kernel(2).table)
        np.testing.assert_array_equal(model.R.table, again.R.table)
        self.assertEqual(model.theta, again.theta)

    def test_builtin_to_json(self):
        description = model_to_json(model_from_json({'Q': {'builtin': 'parity_bsc', 'params': {'p': 0.1}}}))
        self.assertEqual({'builtin': 'parity_bsc', 'params': {'p': 0.1}}, description['Q'])

    def test_builtin_top_level_prior(self):
        model = load_model({'q': 2, 'prior': [0.9, 0.1], 'Q': {'builtin': 'group_testing', 'params': {'f': 0.05}}})
        np.testing.assert_allclose([0.9, 0.1], model.prior.probs)
        again = model_from_json(json.loads(json.dumps(model_to_json(model))))
        np.testing.assert_allclose([0.9, 0.1], again.prior.probs)
        self.assertEqual(0.1, model_to_json(model)['Q']['params']['prior'])

    def test_builtin_prior_it_cannot_honour(self):
        builtin = {'builtin': 'parity_bsc', 'params': {'p': 0.1}}
        with self.assertRaises(InvalidParameterError):
            model_from_json({'q': 3, 'Q': builtin})
        with self.assertRaises(InvalidParameterError):
            model_from_json({'prior': [0.2, 0.3, 0.5], 'Q': builtin})
        with self.assertRaises(InvalidParameterError):
            model_from_json({'prior': [0.6, 0.6], 'Q': builtin})
        with self.assertRaises(InvalidParameterError):
            model_from_json({'prior': [0.9, 0.1], 'Q': {'builtin': 'parity_bsc', 'params': {'p': 0.1, 'prior': 0.3}}})

    def test_invalid(self):
        with self.assertRaises(InvalidParameterError):
            model_from_json({'prior': [0.5, 0.5]})
        with self.assertRaises(InvalidParameterError):
            model_from_json({'Q': {'1': [[1.0, 0.0], [0.0, 1.0]]}})
        broken = dict(EXPLICIT_MODEL, R=[[0.8, 0.3], [0.1, 0.7]])
        with self.assertRaises(ModelValidationError):
            model_from_json(broken)

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'model.json')
            with open(path, 'w') as fp:
                json.dump(EXPLICIT_MODEL, fp)
            self.assertEqual(0.2, load_model(path).theta)


class WorldJsonTest(unittest.TestCase):

    def test_round_trip(self):
        G = sample_graph(EnsembleParams(20, 0.5, 2.0), seed=1)
        model = model_from_json({'Q': {'builtin': 'group_testing', 'params': {'f': 0.05}}, 'theta': 0.4})
        world = sample_world(G, model, 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'world.json')
            write_world(path, world)
            with open(path) as fp:
                raw = json.load(fp)
            self.assertEqual([None if r == HIDDEN else int(r) for r in world.reveal], raw['reveal'])
            again = read_world(path)
        for field in ('x', 'y', 'z', 'reveal', 'reveal_u'):
            np.testing.assert_array_equal(getattr(world, field), getattr(again, field))

    def test_missing_field(self):
        with self.assertRaises(InvalidParameterError):
            world_from_json({'x': [0], 'y': [], 'z': [0]})


class CsvTest(unittest.TestCase):

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def rows(self, name):
        with open(self.path(name)) as fp:
            return list(csv.reader(fp))

    def test_marginals(self):
        write_marginals_csv(self.path('m.csv'), np.array([[0.25, 0.75], [1.0, 0.0]]))
        self.assertEqual([['var', 'nu_0', 'nu_1'], ['0', '0.25', '0.75'], ['1', '1', '0']], self.rows('m.csv'))

    def test_messages(self):
        G = sample_graph(EnsembleParams(10, 0.5, 2.0), seed=4)
        model = model_from_json({'Q': {'builtin': 'group_testing', 'params': {'f': 0.05}}})
        result = bp_run(G, model, sample_world(G, model, 1))
        dump_messages_csv(self.path('msgs.csv'), result.messages)
        rows = self.rows('msgs.csv')
        self.assertEqual(['direction', 'var', 'fac', 'symbol', 'value'], rows[0])
        self.assertEqual(1 + 4 * G.num_edges, len(rows))

    def test_population_round_trip(self):
        model = model_from_json({'Q': {'builtin': 'parity_bsc', 'params': {'p': 0.1, 'r': 0.1}}})
        pop = de_init(model, 50, seed=2)
        write_population_csv(self.path('pop.csv'), pop)
        again = read_population_csv(self.path('pop.csv'))
        np.testing.assert_array_equal(pop.x, again.x)
        np.testing.assert_array_equal(pop.messages, again.messages)

    def test_history(self):
        model = model_from_json({'Q': {'builtin': 'group_testing', 'params': {'f': 0.05}}})

        def mean_one(p):
            return p.messages[:, 1].mean()

        _, history = de_run(model, 100, 2, seed=1, track=[mean_one], gamma=2.0, alpha=0.5)
        write_history_csv(self.path('h.csv'), history)
        rows = self.rows('h.csv')
        self.assertEqual(['generation', 'mean_entropy', 'error_proxy', 'ks_to_prev', 'mean_one'], rows[0])
        self.assertEqual(4, len(rows))
        self.assertEqual('', rows[1][3])
