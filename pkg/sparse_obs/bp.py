"""
Belief propagation on factor graphs: synchronous sum-product sweeps, BP marginals, the
one-step local map F, cavity marginals and the boundary-factorized marginal of radius t.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from sparse_obs.errors import InvalidParameterError, ZeroNormalizerError
from sparse_obs.graph import FactorGraph, graph_surgery, neighborhood, residual_graph
from sparse_obs.model import HIDDEN, ObservationModel, World
from sparse_obs.oracle import ExactPosterior, log_weight_tensor, normalize_log

logger = logging.getLogger(__name__)

INIT_UNIFORM = 'uniform'
INIT_PRIOR = 'prior'
METHOD_ORACLE = 'oracle'
METHOD_BP = 'bp'

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 200


@dataclass
class MessageSet:
    """
    One message per edge and direction; row ``k`` of both arrays belongs to ``edges[k]``,
    an (i, a) pair. var_to_fac holds nu_{i->a}, fac_to_var holds nu-hat_{a->i}.
    """
    edges: Tuple[Tuple[int, int], ...]
    var_to_fac: np.ndarray
    fac_to_var: np.ndarray
    index: Dict[Tuple[int, int], int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {e: k for k, e in enumerate(self.edges)}

    @classmethod
    def filled(cls, G: FactorGraph, q: int, value: np.ndarray) -> 'MessageSet':
        edges = tuple(G.edges())
        block = np.tile(np.asarray(value, dtype=float), (len(edges), 1)).reshape(len(edges), q)
        return cls(edges, block, block.copy())

    def copy(self) -> 'MessageSet':
        return MessageSet(self.edges, self.var_to_fac.copy(), self.fac_to_var.copy())

    def v2f(self, i: int, a: int) -> np.ndarray:
        return self.var_to_fac[self.index[(i, a)]]

    def f2v(self, a: int, i: int) -> np.ndarray:
        return self.fac_to_var[self.index[(i, a)]]


class BPResult(NamedTuple):
    messages: MessageSet
    converged: bool
    iters: int
    residual: float


@dataclass(frozen=True)
class StarFactor:
    y: int
    arity: int
    slots: Tuple[int, ...]


class LocalStar:
    """
    Center variable with its local observations and adjacent factors. Each factor lists
    the slots of its other neighbors, so a factor of arity k has k - 1 slots. Slot labels
    are graph ids for stars read off a graph and running numbers for sampled ones.
    """
    def __init__(self, z: int, reveal: int = HIDDEN, center: Optional[int] = None) -> None:
        self.center = center
        self.z = int(z)
        self.reveal = int(reveal)
        self.factors: List[StarFactor] = []

    def add_factor(self, y: int, slots: Sequence[int]):
        slots = tuple(int(s) for s in slots)
        self.factors.append(StarFactor(y=int(y), arity=len(slots) + 1, slots=slots))
        return self


def star_of(G: FactorGraph, world: World, i: int) -> LocalStar:
    G.check_var(i)
    star = LocalStar(world.z[i], world.reveal[i], center=i)
    for a in G.adj_var[i]:
        star.add_factor(world.y[a], [j for j in G.adj_fac[a] if j != i])
    return star


def _normalized(w: np.ndarray, edge=None, node=None) -> np.ndarray:
    total = w.sum()
    if not total > 0:
        where = f"edge {edge}" if edge is not None else f"node {node}"
        raise ZeroNormalizerError(f"All-zero update at {where}; observations contradict a hard kernel.",
                                  edge=edge, node=node)
    return w / total


def contract_factor(table: np.ndarray, incoming: Sequence[Optional[np.ndarray]], keep: int) -> np.ndarray:
    """
    Sum a factor table against the messages on every axis except ``keep``; returns the
    unnormalized vector over the kept axis.
    """
    out = table
    for ax in range(table.ndim - 1, -1, -1):
        if ax != keep:
            out = np.tensordot(out, incoming[ax], axes=([ax], [0]))
    return out


def local_update_F(star: LocalStar, incoming: Sequence[Sequence[np.ndarray]], model: ObservationModel) -> np.ndarray:
    """
    One-step marginal map: p R^theta(z|x) times, for each factor, the sum over the other
    inputs of Q(y | x, x_others) weighted by their incoming messages. ``incoming[f][s]`` is
    the message for slot s of factor f.
    """
    if len(incoming) != len(star.factors):
        raise InvalidParameterError(f"Expected messages for {len(star.factors)} factors, got {len(incoming)}.")
    w = model.evidence(star.z, star.reveal)
    for f, msgs in zip(star.factors, incoming):
        if len(msgs) != len(f.slots):
            raise InvalidParameterError(f"Factor with {len(f.slots)} slots received {len(msgs)} messages.")
        table = model.kernel(f.arity).given(f.y)
        w = w * contract_factor(table, [None] + list(msgs), keep=0)
    return _normalized(w, node=star.center)


def _init_messages(G: FactorGraph, model: ObservationModel, world: World,
                   init: Union[str, MessageSet]) -> MessageSet:
    q = model.q
    if isinstance(init, MessageSet):
        if init.edges != tuple(G.edges()):
            raise InvalidParameterError("Initial messages do not match the graph's edges.")
        return init.copy()
    msgs = MessageSet.filled(G, q, np.full(q, 1.0 / q))
    if init == INIT_UNIFORM:
        return msgs
    if init == INIT_PRIOR:
        for k, (i, a) in enumerate(msgs.edges):
            msgs.var_to_fac[k] = _normalized(model.evidence(world.z[i], world.reveal[i]), edge=(i, a))
        return msgs
    raise InvalidParameterError(f"Unknown init '{init}', expected '{INIT_UNIFORM}', '{INIT_PRIOR}' or a MessageSet.")


def _factor_sweep(G: FactorGraph, model: ObservationModel, world: World, msgs: MessageSet) -> np.ndarray:
    out = np.empty_like(msgs.fac_to_var)
    for a, members in enumerate(G.adj_fac):
        if not members:
            continue
        table = model.kernel(len(members)).given(world.y[a])
        incoming = [msgs.v2f(j, a) for j in members]
        for pos, j in enumerate(members):
            out[msgs.index[(j, a)]] = _normalized(contract_factor(table, incoming, pos), edge=(j, a))
    return out


def _variable_sweep(G: FactorGraph, model: ObservationModel, world: World,
                    msgs: MessageSet, fac_to_var: np.ndarray) -> np.ndarray:
    out = np.empty_like(msgs.var_to_fac)
    for i, facs in enumerate(G.adj_var):
        if not facs:
            continue
        local = model.evidence(world.z[i], world.reveal[i])
        incoming = [fac_to_var[msgs.index[(i, a)]] for a in facs]
        for pos, a in enumerate(facs):
            w = local.copy()
            for other, m in enumerate(incoming):
                if other != pos:
                    w = w * m
            out[msgs.index[(i, a)]] = _normalized(w, edge=(i, a))
    return out


def bp_run(G: FactorGraph, model: ObservationModel, world: World,
           init: Union[str, MessageSet] = INIT_PRIOR, damping: float = 0.0,
           tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> BPResult:
    """
    Synchronous sum-product. A sweep computes every factor-to-variable message from the
    current variable-to-factor messages, then every variable-to-factor message from those;
    the damped update is (1 - damping) * new + damping * old. The residual is the largest
    total-variation change of a message in either direction.

    :param init: 'uniform', 'prior' (nu_{i->a} proportional to p R^theta(z_i|.)) or a MessageSet
    :param damping: lambda in [0, 1)
    :param tol: converged iff residual <= tol
    :param max_iter: maximum number of sweeps, at least 1
    """
    if not 0.0 <= damping < 1.0:
        raise InvalidParameterError(f"damping must lie in [0, 1), got {damping}.")
    if max_iter < 1:
        raise InvalidParameterError(f"max_iter must be at least 1, got {max_iter}.")
    world.check(G)
    msgs = _init_messages(G, model, world, init)
    if not msgs.edges:
        return BPResult(msgs, True, 1, 0.0)

    residual = np.inf
    iters = 0
    for iters in range(1, max_iter + 1):
        fac_to_var = _factor_sweep(G, model, world, msgs)
        var_to_fac = _variable_sweep(G, model, world, msgs, fac_to_var)
        if damping > 0:
            fac_to_var = (1.0 - damping) * fac_to_var + damping * msgs.fac_to_var
            var_to_fac = (1.0 - damping) * var_to_fac + damping * msgs.var_to_fac
        residual = 0.5 * max(
            np.abs(var_to_fac - msgs.var_to_fac).sum(axis=1).max(),
            np.abs(fac_to_var - msgs.fac_to_var).sum(axis=1).max(),
        )
        msgs.var_to_fac = var_to_fac
        msgs.fac_to_var = fac_to_var
        logger.debug("BP sweep %d: residual %.3e", iters, residual)
        if residual <= tol:
            return BPResult(msgs, True, iters, float(residual))

    logger.warning("BP did not converge after %d sweeps (residual %.3e, tol %.1e).", iters, residual, tol)
    return BPResult(msgs, False, iters, float(residual))


def bp_marginal(G: FactorGraph, model: ObservationModel, world: World, msgs: MessageSet, i: int) -> np.ndarray:
    """BP estimate of mu_i: p(x) R^theta(z_i|x) times every incoming factor message."""
    G.check_var(i)
    w = model.evidence(world.z[i], world.reveal[i])
    for a in G.adj_var[i]:
        w = w * msgs.f2v(a, i)
    return _normalized(w, node=i)


def bp_marginals(G: FactorGraph, model: ObservationModel, world: World, msgs: MessageSet) -> np.ndarray:
    return np.array([bp_marginal(G, model, world, msgs, i) for i in range(G.n)]).reshape(G.n, model.q)


def _marginals_on(G: FactorGraph, model: ObservationModel, world: World, ids: Sequence[int],
                  method: str, **bp_kwargs) -> Dict[int, np.ndarray]:
    if method == METHOD_ORACLE:
        posterior = ExactPosterior(G, model, world)
        return {j: posterior.marginal(j) for j in ids}
    if method == METHOD_BP:
        result = bp_run(G, model, world, **bp_kwargs)
        return {j: bp_marginal(G, model, world, result.messages, j) for j in ids}
    raise InvalidParameterError(f"Unknown method '{method}', expected '{METHOD_ORACLE}' or '{METHOD_BP}'.")


def cavity_marginals(G: FactorGraph, model: ObservationModel, world: World, i: int,
                     method: str = METHOD_ORACLE, **bp_kwargs) -> Dict[int, np.ndarray]:
    """
    Marginals of every j sharing a factor with i, computed on the graph with i and all
    factors touching i taken out.
    """
    G.check_var(i)
    neighbors = sorted({j for a in G.adj_var[i] for j in G.adj_fac[a] if j != i})
    surgery = graph_surgery(G, drop_var=i)
    sub_world = world.restricted(surgery.var_map, surgery.fac_map)
    sub = _marginals_on(surgery.graph, model, sub_world, [surgery.var_map[j] for j in neighbors],
                        method, **bp_kwargs)
    return {j: sub[surgery.var_map[j]] for j in neighbors}


def cavity_incoming(star: LocalStar, cavity: Dict[int, np.ndarray]) -> List[List[np.ndarray]]:
    """Arrange cavity marginals per factor slot, as local_update_F expects them."""
    return [[cavity[j] for j in f.slots] for f in star.factors]


def boundary_factorized_marginal(G: FactorGraph, model: ObservationModel, world: World, i: int, t: int,
                                 method: str = METHOD_ORACLE, **bp_kwargs) -> np.ndarray:
    """
    Marginal of i from the ball B(i, t) with the boundary D(i, t) treated as independent:
    exact sum over x_B of the ball's function nodes touching V(i, t-1), p R^theta
    for B minus D, and for j in D the marginal of j on the residual graph that drops
    V(i, t-1) and the factors touching it.
    """
    nb = neighborhood(G, i, t)
    order = sorted(nb.vars)
    axis = {j: k for k, j in enumerate(order)}

    surgery = residual_graph(G, nb)
    sub_world = world.restricted(surgery.var_map, surgery.fac_map)
    boundary = sorted(nb.boundary)
    sub = _marginals_on(surgery.graph, model, sub_world, [surgery.var_map[j] for j in boundary],
                        method, **bp_kwargs)

    unary = []
    for j in order:
        if j in nb.boundary:
            unary.append((axis[j], sub[surgery.var_map[j]]))
        else:
            unary.append((axis[j], model.evidence(world.z[j], world.reveal[j])))
    factors = [([axis[j] for j in G.adj_fac[a]], model.kernel(len(G.adj_fac[a])).given(world.y[a]))
               for a in sorted(nb.inner_facs)]
    probs = normalize_log(log_weight_tensor(model.q, len(order), unary, factors))
    others = tuple(k for k in range(len(order)) if k != axis[i])
    return probs.sum(axis=others) if others else probs
