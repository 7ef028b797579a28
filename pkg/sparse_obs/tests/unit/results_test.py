import json
import os
import tempfile
import unittest

import numpy as np

from sparse_obs.results import ResultTable, RunningStats, accumulate, build_manifest, format_value, manifest_path, \
    write_manifest
from sparse_obs.rng import BIT_GENERATOR, derived_seed, make_rng
from sparse_obs.workers import fan_out


class RunningStatsTest(unittest.TestCase):

    def test_matches_numpy(self):
        values = np.random.default_rng(1).normal(size=101)
        stats = RunningStats().extend(values)
        self.assertEqual(101, stats.count)
        self.assertAlmostEqual(values.mean(), stats.mean, places=12)
        self.assertAlmostEqual(values.var(ddof=1), stats.variance, places=12)
        self.assertAlmostEqual(values.std(ddof=1) / np.sqrt(101), stats.std_error, places=12)

    def test_merge(self):
        values = np.random.default_rng(2).uniform(size=60)
        left = RunningStats().extend(values[:25])
        right = RunningStats().extend(values[25:])
        merged = left.merge(right)
        self.assertAlmostEqual(values.mean(), merged.mean, places=12)
        self.assertAlmostEqual(values.var(ddof=1), merged.variance, places=12)
        self.assertIs(merged, merged.merge(RunningStats()))

    def test_accumulate_independent_of_threads(self):
        values = np.random.default_rng(3).exponential(size=150)
        serial = accumulate(lambda k: values[k], range(150), threads=1, block=16)
        pooled = accumulate(lambda k: values[k], range(150), threads=4, block=16)
        self.assertEqual((serial.count, serial.mean, serial.variance), (pooled.count, pooled.mean, pooled.variance))
        self.assertAlmostEqual(values.mean(), pooled.mean, places=12)
        self.assertAlmostEqual(values.var(ddof=1), pooled.variance, places=12)
        self.assertEqual(0, accumulate(float, [], threads=2).count)

    def test_small_counts(self):
        self.assertEqual(0.0, RunningStats().push(3.0).variance)
        self.assertTrue(np.isnan(RunningStats().std_error))


class ResultTableTest(unittest.TestCase):

    def test_format_value(self):
        self.assertEqual('', format_value(None))
        self.assertEqual('true', format_value(True))
        self.assertEqual('3', format_value(np.int64(3)))
        self.assertEqual('0.10000000000000001', format_value(0.1))
        self.assertEqual('label', format_value('label'))

    def test_rows(self):
        table = ResultTable(['n', 'statistic', 'bound'])
        table.add_row(n=6, statistic=0.5).add_row(n=8, statistic=0.25, bound=1.0)
        self.assertEqual(2, len(table))
        self.assertEqual([0.5, 0.25], table.column('statistic'))
        self.assertEqual([None, 1.0], table.column('bound'))
        self.assertEqual([{'n': 8, 'statistic': 0.25, 'bound': 1.0}], table.where(n=8))
        with self.assertRaises(KeyError):
            table.add_row(size=3)

    def test_write_csv(self):
        table = ResultTable(['n', 'statistic'])
        table.add_row(n=6, statistic=0.5)
        table.add_row(n=8)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'out.csv')
            table.write_csv(path)
            with open(path) as fp:
                self.assertEqual('n,statistic\n6,0.5\n8,\n', fp.read())


class ManifestTest(unittest.TestCase):

    def test_manifest(self):
        manifest = build_manifest({'experiment': 'graph_stats', 'seed': 3}, seeds=[3])
        self.assertEqual(BIT_GENERATOR, manifest['bit_generator'])
        self.assertEqual([3], manifest['seeds'])
        self.assertIn('numpy', manifest['versions'])
        with tempfile.TemporaryDirectory() as tmp:
            path = manifest_path(os.path.join(tmp, 'out.csv'))
            self.assertTrue(path.endswith('out.csv.manifest.json'))
            write_manifest(path, manifest)
            with open(path) as fp:
                self.assertEqual(manifest, json.load(fp))


class RngTest(unittest.TestCase):

    def test_reproducible(self):
        self.assertEqual(make_rng(5).random(), make_rng(5).random())
        self.assertEqual(12, derived_seed(10, 2))


class FanOutTest(unittest.TestCase):

    def test_order_kept(self):
        items = list(range(20))
        self.assertEqual([i * i for i in items], fan_out(lambda i: i * i, items, threads=4))
        self.assertEqual([i * i for i in items], fan_out(lambda i: i * i, items))
