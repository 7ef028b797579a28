import json
import os
import tempfile
import unittest

from sparse_obs.config import EXPERIMENTS, config_from_dict, default_config, load_config
from sparse_obs.errors import ConfigError


class ConfigTest(unittest.TestCase):

    def test_packaged_defaults(self):
        for experiment in EXPERIMENTS:
            cfg = config_from_dict({'experiment': experiment})
            self.assertEqual(experiment, cfg.experiment)
            self.assertEqual(f'{experiment}.csv', cfg.output)
            self.assertEqual(default_config(experiment)['seed'], cfg.seed)

    def test_overrides_merge_with_defaults(self):
        cfg = config_from_dict({'ensemble': {'gamma': 3.0}, 'sizes': [6, 7]}, 'correlation_decay')
        self.assertEqual((0.5, 3.0), (cfg.alpha, cfg.gamma))
        self.assertEqual([6, 7], cfg.sizes)
        self.assertEqual(200, cfg.replicas)

    def test_unknown_field(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'replica': 3}, 'correlation_decay')
        self.assertEqual('replica', ctx.exception.field)
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'ensemble': {'beta': 1.0}}, 'correlation_decay')
        self.assertEqual('ensemble.beta', ctx.exception.field)

    def test_experiment_mismatch(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'experiment': 'graph_stats'}, 'de_match')
        self.assertEqual('experiment', ctx.exception.field)
        with self.assertRaises(ConfigError):
            config_from_dict({'experiment': 'phase_diagram'})

    def test_invalid_values(self):
        cases = [
            ({'epsilon': 0.0}, 'epsilon'),
            ({'epsilon': 'big'}, 'epsilon'),
            ({'replicas': 0}, 'replicas'),
            ({'replicas': 2.5}, 'replicas'),
            ({'sizes': []}, 'sizes'),
            ({'damping': 1.0}, 'damping'),
            ({'ensemble': {'alpha': 0.0}}, 'alpha'),
            ({'t_values': [-1]}, 't_values'),
            ({'model': 7}, 'model'),
        ]
        for override, field in cases:
            with self.subTest(field=field):
                with self.assertRaises(ConfigError) as ctx:
                    config_from_dict(override, 'bp_vs_exact')
                self.assertEqual(field, ctx.exception.field)

    def test_population_floor(self):
        self.assertEqual(1000, config_from_dict({}, 'de_match').min_population)
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'n_pop': 999}, 'de_match')
        self.assertEqual('n_pop', ctx.exception.field)
        self.assertEqual(200, config_from_dict({'n_pop': 200, 'min_population': 100}, 'de_match').n_pop)
        self.assertEqual(200, config_from_dict({'n_pop': 200}, 'bp_vs_exact').n_pop)
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'min_population': 0}, 'de_match')
        self.assertEqual('min_population', ctx.exception.field)

    def test_manifest_round_trip(self):
        cfg = config_from_dict({'seed': 42, 'replicas': 10}, 'mutual_info_sum')
        again = config_from_dict({'config': cfg.to_dict()}, 'mutual_info_sum')
        self.assertEqual(cfg, again)

    def test_load_config_resolves_model_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            with open(os.path.join(tmp, 'model.json'), 'w') as fp:
                json.dump({'Q': {'builtin': 'parity_bsc', 'params': {'p': 0.1}}}, fp)
            path = os.path.join(tmp, 'run.json')
            with open(path, 'w') as fp:
                json.dump({'experiment': 'overlap_variance', 'model': 'model.json'}, fp)
            cfg = load_config(path)
            self.assertEqual(os.path.join(tmp, 'model.json'), cfg.model)

    def test_load_config_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'broken.json')
            with open(path, 'w') as fp:
                fp.write('{"experiment": ')
            with self.assertRaises(ConfigError):
                load_config(path)
            with self.assertRaises(ConfigError):
                load_config(os.path.join(tmp, 'missing.json'))
