"""
Experiment configuration. A config is a JSON object; missing fields are taken from the
packaged default for the experiment (``assets/configs/<experiment>.json``). Run manifests
carry the fully resolved config under ``config`` and are accepted as configs too.
"""
import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Union

from sparse_obs.assets import default_config_path
from sparse_obs.density_evolution import EXPERIMENT_MIN_POPULATION
from sparse_obs.errors import ConfigError

EXPERIMENTS = (
    'correlation_decay',
    'mutual_info_sum',
    'overlap_variance',
    'bp_vs_exact',
    'de_match',
    'entropy_identity',
    'graph_stats',
)


@dataclass
class ExperimentConfig:
    experiment: str
    model: Union[str, Dict[str, Any], None] = None
    alpha: float = 0.5
    gamma: float = 2.0
    sizes: List[int] = field(default_factory=lambda: [6])
    epsilon: float = 0.3
    k: int = 2
    replicas: int = 100
    seed: int = 0
    output: str = 'results.csv'
    threads: int = 1
    # theta fixed instead of integrated over [0, epsilon]
    theta_override: Optional[float] = None
    # working point of the fixed-theta experiments
    theta: float = 0.1
    delta_theta: float = 0.05
    n_worlds: int = 2000
    second_derivative: bool = False
    t_values: List[int] = field(default_factory=lambda: [1])
    forest_only: bool = False
    graphs: int = 1
    nodes_per_graph: int = 100
    n_pop: int = 10000
    # floor on n_pop for de_match runs
    min_population: int = EXPERIMENT_MIN_POPULATION
    iters: int = 30
    de_tol: float = 0.02
    bp_tol: float = 1e-8
    bp_max_iter: int = 200
    damping: float = 0.0
    max_shape_nodes: int = 3
    tail_radii: List[int] = field(default_factory=lambda: [1, 2])
    tail_max: int = 40

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out['ensemble'] = {'alpha': out.pop('alpha'), 'gamma': out.pop('gamma')}
        return out

    def validate(self) -> 'ExperimentConfig':
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment '{self.experiment}', expected one of {', '.join(EXPERIMENTS)}",
                              'experiment')
        if self.experiment != 'graph_stats' and self.model is None:
            raise ConfigError("a model description or model file is required", 'model')
        if self.model is not None and not isinstance(self.model, (str, dict)):
            raise ConfigError("must be an inline model object or a file path", 'model')
        _positive(self, 'alpha')
        _at_least(self, 'gamma', 0.0)
        if not self.sizes or any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in self.sizes):
            raise ConfigError(f"must be a non-empty list of positive integers, got {self.sizes!r}", 'sizes')
        if not 0.0 < _check_type(self, 'epsilon', (int, float)) <= 1.0:
            raise ConfigError(f"must lie in (0, 1], got {self.epsilon}", 'epsilon')
        for name in ('k', 'replicas', 'threads', 'n_worlds', 'graphs', 'nodes_per_graph', 'n_pop',
                     'bp_max_iter', 'max_shape_nodes', 'tail_max'):
            _count(self, name)
        _count(self, 'iters', minimum=0)
        _count(self, 'seed', minimum=0)
        _count(self, 'min_population')
        if self.experiment == 'de_match' and self.n_pop < self.min_population:
            raise ConfigError(f"must be at least min_population = {self.min_population} for de_match, got {self.n_pop}",
                              'n_pop')
        for name in ('theta', 'delta_theta', 'de_tol', 'bp_tol'):
            _unit(self, name)
        if self.theta_override is not None:
            _unit(self, 'theta_override')
        if not 0.0 <= _check_type(self, 'damping', (int, float)) < 1.0:
            raise ConfigError(f"must lie in [0, 1), got {self.damping}", 'damping')
        for name in ('t_values', 'tail_radii'):
            values = getattr(self, name)
            if not values or any(not isinstance(t, int) or isinstance(t, bool) or t < 0 for t in values):
                raise ConfigError(f"must be a non-empty list of non-negative integers, got {values!r}", name)
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("must be a non-empty path", 'output')
        return self


def _check_type(cfg, name, types):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, types):
        raise ConfigError(f"expected a number, got {value!r}", name)
    return value


def _positive(cfg, name):
    if _check_type(cfg, name, (int, float)) <= 0:
        raise ConfigError(f"must be positive, got {getattr(cfg, name)}", name)


def _at_least(cfg, name, minimum):
    if _check_type(cfg, name, (int, float)) < minimum:
        raise ConfigError(f"must be at least {minimum}, got {getattr(cfg, name)}", name)


def _unit(cfg, name):
    if not 0.0 <= _check_type(cfg, name, (int, float)) <= 1.0:
        raise ConfigError(f"must lie in [0, 1], got {getattr(cfg, name)}", name)


def _count(cfg, name, minimum=1):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", name)
    if value < minimum:
        raise ConfigError(f"must be at least {minimum}, got {value}", name)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key == 'ensemble' and isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    return out


def default_config(experiment: str) -> Dict[str, Any]:
    path = default_config_path(experiment)
    if not os.path.exists(path):
        return {'experiment': experiment}
    with open(path) as fp:
        return json.load(fp)


def config_from_dict(obj: Dict[str, Any], experiment: Optional[str] = None) -> ExperimentConfig:
    """
    Resolve a raw config object. ``experiment`` (from the CLI subcommand) wins over the
    field in the object; a mismatch between the two is an error.
    """
    if not isinstance(obj, dict):
        raise ConfigError("the config must be a JSON object", '<root>')
    if 'config' in obj and isinstance(obj['config'], dict):
        obj = obj['config']
    name = obj.get('experiment', experiment)
    if experiment is not None and name != experiment:
        raise ConfigError(f"config is for '{name}', not '{experiment}'", 'experiment')
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}, expected one of {', '.join(EXPERIMENTS)}", 'experiment')
    merged = _merge(default_config(name), obj)
    merged['experiment'] = name

    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for key, value in merged.items():
        if key == 'ensemble':
            if not isinstance(value, dict):
                raise ConfigError("must be an object with alpha and gamma", 'ensemble')
            for sub, sub_value in value.items():
                if sub not in ('alpha', 'gamma'):
                    raise ConfigError(f"unknown ensemble parameter '{sub}'", f'ensemble.{sub}')
                values[sub] = sub_value
        elif key in known:
            values[key] = value
        else:
            raise ConfigError("unknown field", key)
    return ExperimentConfig(**values).validate()


def load_config(path: str, experiment: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path) as fp:
            obj = json.load(fp)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read {path}: {err}", '<file>', cause=err) from err
    cfg = config_from_dict(obj, experiment)
    if isinstance(cfg.model, str) and not os.path.isabs(cfg.model):
        cfg.model = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.model)
    return cfg
