"""Result tables, running statistics and run manifests."""
import csv
import json
import math
import platform
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pkg_resources
import scipy

from sparse_obs.rng import BIT_GENERATOR
from sparse_obs.workers import fan_out

FLOAT_FORMAT = '%.17g'
MANIFEST_SUFFIX = '.manifest.json'
# replicas per worker task in ``accumulate``
STATS_BLOCK = 32


class RunningStats:
    """Welford accumulator for mean and variance; ``merge`` combines two partial runs exactly."""

    def __init__(self) -> None:
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, value: float) -> 'RunningStats':
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (value - self.mean)
        return self

    def extend(self, values: Iterable[float]) -> 'RunningStats':
        for v in values:
            self.push(v)
        return self

    def merge(self, other: 'RunningStats') -> 'RunningStats':
        if other.count == 0:
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self._m2 += other._m2 + delta * delta * self.count * other.count / total
        self.mean += delta * other.count / total
        self.count = total
        return self

    @property
    def variance(self) -> float:
        """Sample variance (ddof=1); 0 below two values."""
        return self._m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 0 else math.nan


def accumulate(fn: Callable[[Any], float], items: Iterable[Any], threads: int = 1,
               block: int = STATS_BLOCK) -> RunningStats:
    """
    Statistics of ``fn`` over ``items``. Items are cut into consecutive blocks of ``block``;
    each worker accumulates one block and the partial results are merged in block order,
    so the outcome does not depend on ``threads``.
    """
    items = list(items)
    blocks = [items[start:start + block] for start in range(0, len(items), block)]
    partial = fan_out(lambda chunk: RunningStats().extend(fn(item) for item in chunk), blocks, threads)
    out = RunningStats()
    for stats in partial:
        out.merge(stats)
    return out


def format_value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


class ResultTable:
    """
    Rows of named values with a fixed column order. Missing values are written as empty
    cells, floats with 17 significant digits.
    """

    def __init__(self, columns: Sequence[str]) -> None:
        self.columns = list(columns)
        self.rows: List[Dict[str, Any]] = []

    def add_row(self, **values) -> 'ResultTable':
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"Unknown result columns: {sorted(unknown)}")
        self.rows.append(values)
        return self

    def column(self, name: str) -> List[Any]:
        return [row.get(name) for row in self.rows]

    def where(self, **match) -> List[Dict[str, Any]]:
        return [row for row in self.rows if all(row.get(k) == v for k, v in match.items())]

    def write_csv(self, path: str) -> None:
        with open(path, 'w', newline='') as fp:
            writer = csv.writer(fp, lineterminator='\n')
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([format_value(row.get(c)) for c in self.columns])

    def __len__(self):
        return len(self.rows)


def package_version() -> str:
    try:
        return pkg_resources.get_distribution('sparse-obs').version
    except pkg_resources.DistributionNotFound:
        return 'unknown'


def build_manifest(config: Dict[str, Any], seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    return {
        'config': config,
        'seeds': list(seeds or []),
        'bit_generator': BIT_GENERATOR,
        'versions': {
            'sparse_obs': package_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'python': platform.python_version(),
        },
    }


def manifest_path(csv_path: str) -> str:
    return csv_path + MANIFEST_SUFFIX


def write_manifest(path: str, manifest: Dict[str, Any]) -> None:
    with open(path, 'w') as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write('\n')
