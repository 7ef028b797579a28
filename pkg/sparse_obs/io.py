"""Files: graph edge lists, model and world JSON, message, marginal and population CSVs."""
import contextlib
import csv
import json
import math
import sys
from dataclasses import replace
from typing import Any, Dict, Optional, Union

import numpy as np

from sparse_obs.bp import MessageSet
from sparse_obs.density_evolution import DEHistory, Population
from sparse_obs.errors import InvalidParameterError
from sparse_obs.graph import FactorGraph
from sparse_obs.model import (HIDDEN, DiscreteKernel, KernelFamily, ObservationModel, Prior, World,
                              builtin_model, validate_model)
from sparse_obs.results import format_value


@contextlib.contextmanager
def open_output(path: Optional[str]):
    """Text output to ``path``, or to stdout for None and '-'."""
    if path in (None, '-'):
        yield sys.stdout
    else:
        with open(path, 'w', newline='') as fp:
            yield fp


# --- Graphs --------------------------------------------------------------------------------

def write_edge_list(path: Optional[str], G: FactorGraph) -> None:
    """Line 1 is ``n m``, then one ``i a`` line per edge, sorted."""
    with open_output(path) as fp:
        fp.write(f"{G.n} {G.m}\n")
        for i, a in G.edges():
            fp.write(f"{i} {a}\n")


def read_edge_list(path: str) -> FactorGraph:
    with open(path) as fp:
        lines = [line.split() for line in fp if line.strip()]
    if not lines or len(lines[0]) != 2:
        raise InvalidParameterError(f"{path}: first line must be 'n m'.")
    try:
        n, m = int(lines[0][0]), int(lines[0][1])
        edges = [(int(i), int(a)) for i, a in lines[1:]]
    except ValueError as err:
        raise InvalidParameterError(f"{path}: malformed edge list.", cause=err) from err
    return FactorGraph(n, m, edges)


# --- Models --------------------------------------------------------------------------------

def model_from_json(obj: Dict[str, Any]) -> ObservationModel:
    """
    Model description: {q, prior, theta, R: table, Q: {k: table} or {builtin: name, params}}.
    Tables are nested arrays with the output axis outermost. The result is validated.
    """
    if not isinstance(obj, dict) or 'Q' not in obj:
        raise InvalidParameterError("A model description needs a 'Q' entry.")
    Q = obj['Q']
    if isinstance(Q, dict) and 'builtin' in Q:
        params = dict(Q.get('params') or {})
        if 'q' in obj and int(obj['q']) != 2:
            raise InvalidParameterError(f"Built-in model '{Q['builtin']}' is binary, got q = {obj['q']}.")
        if 'prior' in obj:
            prior = Prior.of(obj['prior'])
            if prior.q != 2:
                raise InvalidParameterError(f"Built-in model '{Q['builtin']}' needs a prior of length 2, "
                                            f"got {prior.q}.")
            if not math.isclose(float(prior.probs.sum()), 1.0, abs_tol=1e-9) or (prior.probs < 0).any():
                raise InvalidParameterError(f"Prior {prior.probs.tolist()} is not a distribution.")
            if 'prior' not in params:
                params['prior'] = float(prior.probs[1])
            elif not math.isclose(float(params['prior']), float(prior.probs[1]), abs_tol=1e-12):
                raise InvalidParameterError(f"Top-level prior {prior.probs.tolist()} contradicts "
                                            f"params prior {params['prior']}.")
        if 'theta' in obj:
            params['theta'] = obj['theta']
        model = builtin_model(Q['builtin'], params)
        if 'R' in obj:
            model = replace(model, R=DiscreteKernel(obj['R'], q=model.q))
        return validate_model(model)

    if 'prior' not in obj:
        raise InvalidParameterError("An explicit model description needs a 'prior'.")
    prior = Prior.of(obj['prior'])
    if 'q' in obj and int(obj['q']) != prior.q:
        raise InvalidParameterError(f"q = {obj['q']} does not match a prior of length {prior.q}.")
    R = DiscreteKernel(obj['R'], q=prior.q) if 'R' in obj else DiscreteKernel(np.ones((1, prior.q)), q=prior.q)
    kernels = {int(k): DiscreteKernel(table, q=prior.q) for k, table in Q.items()}
    model = ObservationModel(
        prior=prior,
        R=R,
        Q=KernelFamily(kernels),
        theta=float(obj.get('theta', 0.0)),
        name=obj.get('name', 'custom'),
    )
    return validate_model(model)


def model_to_json(model: ObservationModel) -> Dict[str, Any]:
    out = {
        'q': model.q,
        'prior': model.prior.probs.tolist(),
        'theta': model.theta,
        'R': model.R.table.tolist(),
    }
    if model.Q.description is not None:
        out['Q'] = {'builtin': model.Q.description['builtin'], 'params': dict(model.Q.description['params'])}
    else:
        out['Q'] = {str(k): model.Q[k].table.tolist() for k in model.Q}
    return out


def load_model(source: Union[str, Dict[str, Any]]) -> ObservationModel:
    """A model from an inline description or a JSON file path."""
    if isinstance(source, str):
        with open(source) as fp:
            source = json.load(fp)
    return model_from_json(source)


# --- Worlds --------------------------------------------------------------------------------

def world_to_json(world: World) -> Dict[str, Any]:
    """Arrays as JSON lists; hidden reveal entries are null."""
    out = {
        'x': world.x.tolist(),
        'y': world.y.tolist(),
        'z': world.z.tolist(),
        'reveal': [None if r == HIDDEN else int(r) for r in world.reveal],
    }
    if world.reveal_u is not None:
        out['reveal_u'] = world.reveal_u.tolist()
    return out


def world_from_json(obj: Dict[str, Any]) -> World:
    try:
        reveal = np.array([HIDDEN if r is None else int(r) for r in obj['reveal']], dtype=int)
        return World(
            x=np.asarray(obj['x'], dtype=int),
            y=np.asarray(obj['y'], dtype=int),
            z=np.asarray(obj['z'], dtype=int),
            reveal=reveal,
            reveal_u=np.asarray(obj['reveal_u'], dtype=float) if 'reveal_u' in obj else None,
        )
    except KeyError as err:
        raise InvalidParameterError(f"World description misses field {err}.", cause=err) from err


def write_world(path: Optional[str], world: World) -> None:
    with open_output(path) as fp:
        json.dump(world_to_json(world), fp)
        fp.write('\n')


def read_world(path: str) -> World:
    with open(path) as fp:
        return world_from_json(json.load(fp))


# --- CSV dumps -----------------------------------------------------------------------------

def _write_rows(path: Optional[str], header, rows) -> None:
    with open_output(path) as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def dump_messages_csv(path: str, msgs: MessageSet) -> None:
    """Debug dump with columns direction, var, fac, symbol, value."""
    def rows():
        for k, (i, a) in enumerate(msgs.edges):
            for xi, v in enumerate(msgs.var_to_fac[k]):
                yield 'var_to_fac', i, a, xi, float(v)
            for xi, v in enumerate(msgs.fac_to_var[k]):
                yield 'fac_to_var', i, a, xi, float(v)

    _write_rows(path, ['direction', 'var', 'fac', 'symbol', 'value'], rows())


def write_marginals_csv(path: Optional[str], marginals: np.ndarray) -> None:
    q = marginals.shape[1]
    _write_rows(path, ['var'] + [f'nu_{xi}' for xi in range(q)],
                ([i] + [float(v) for v in row] for i, row in enumerate(marginals)))


def write_population_csv(path: str, pop: Population) -> None:
    _write_rows(path, ['x'] + [f'nu_{xi}' for xi in range(pop.q)],
                ([int(x)] + [float(v) for v in row] for x, row in zip(pop.x, pop.messages)))


def read_population_csv(path: str, gamma: float = 0.0, alpha: float = 0.0, theta: float = 0.0) -> Population:
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    return Population(x=data[:, 0].astype(int), messages=data[:, 1:], gamma=gamma, alpha=alpha, theta=theta)


def write_history_csv(path: Optional[str], history: DEHistory) -> None:
    tracked = sorted({name for s in history.summaries for name in s.tracked})
    _write_rows(path, ['generation', 'mean_entropy', 'error_proxy', 'ks_to_prev'] + tracked,
                ([s.generation, s.mean_entropy, s.error_proxy, s.ks_to_prev] + [s.tracked.get(n) for n in tracked]
                 for s in history.summaries))
