"""
Random bipartite factor graphs: the G(n, alpha*n, gamma/n) ensemble, Galton-Watson local trees,
neighborhoods, distances and graph surgery for cavity constructions.
"""
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.stats import poisson

from sparse_obs.errors import GraphIndexError, InvalidParameterError
from sparse_obs.rng import make_rng

# floor(alpha * n) is taken after adding this, so that 0.29 * 100 rounds to 29.
ROUNDING_SLACK = 1e-9


class FactorGraph:
    """
    Bipartite graph between n variable nodes and m function nodes.
    Immutable after construction; adjacency lists are sorted tuples.
    """
    def __init__(self, n: int, m: int, edges: Iterable[Tuple[int, int]] = ()) -> None:
        if n < 0 or m < 0:
            raise InvalidParameterError(f"Node counts must be non-negative, got n={n}, m={m}.")
        self.n = int(n)
        self.m = int(m)
        adj_var: List[set] = [set() for _ in range(self.n)]
        adj_fac: List[set] = [set() for _ in range(self.m)]
        for i, a in edges:
            i, a = int(i), int(a)
            if not 0 <= i < self.n or not 0 <= a < self.m:
                raise GraphIndexError(f"Edge ({i}, {a}) out of range for n={self.n}, m={self.m}.")
            adj_var[i].add(a)
            adj_fac[a].add(i)
        self.adj_var: Tuple[Tuple[int, ...], ...] = tuple(tuple(sorted(s)) for s in adj_var)
        self.adj_fac: Tuple[Tuple[int, ...], ...] = tuple(tuple(sorted(s)) for s in adj_fac)
        self._nx: Optional[nx.Graph] = None

    @classmethod
    def from_incidence(cls, incidence: np.ndarray) -> 'FactorGraph':
        """Build from a boolean n x m incidence matrix."""
        n, m = incidence.shape
        rows, cols = np.nonzero(incidence)
        return cls(n, m, zip(rows.tolist(), cols.tolist()))

    def edges(self) -> List[Tuple[int, int]]:
        """All (i, a) pairs, sorted lexicographically."""
        return [(i, a) for i in range(self.n) for a in self.adj_var[i]]

    @property
    def num_edges(self) -> int:
        return sum(len(x) for x in self.adj_var)

    def var_degree(self, i: int) -> int:
        self.check_var(i)
        return len(self.adj_var[i])

    def check_var(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise GraphIndexError(f"Variable node {i} out of range [0, {self.n}).")

    def check_fac(self, a: int) -> None:
        if not 0 <= a < self.m:
            raise GraphIndexError(f"Function node {a} out of range [0, {self.m}).")

    def to_networkx(self) -> nx.Graph:
        """
        Bipartite networkx view, built once: variable i is node i (bipartite=0), function
        node a is node n + a (bipartite=1).
        """
        if self._nx is None:
            H = nx.Graph()
            H.add_nodes_from(range(self.n), bipartite=0)
            H.add_nodes_from(range(self.n, self.n + self.m), bipartite=1)
            H.add_edges_from((i, self.n + a) for i, a in self.edges())
            self._nx = H
        return self._nx

    def is_forest(self) -> bool:
        """True if the graph has no cycles (isolated nodes allowed)."""
        if self.n + self.m == 0:
            return True
        return nx.is_forest(self.to_networkx())

    def __eq__(self, other):
        if not isinstance(other, FactorGraph):
            return NotImplemented
        return self.n == other.n and self.m == other.m and self.adj_var == other.adj_var

    def __hash__(self):
        return hash((self.n, self.m, self.adj_var))

    def __repr__(self):
        return f"FactorGraph(n={self.n}, m={self.m}, edges={self.num_edges})"


@dataclass(frozen=True)
class EnsembleParams:
    n: int
    alpha: float
    gamma: float

    @property
    def m(self) -> int:
        return int(math.floor(self.alpha * self.n + ROUNDING_SLACK))

    @property
    def p_edge(self) -> float:
        return self.gamma / self.n

    def validate(self) -> 'EnsembleParams':
        if self.n < 1:
            raise InvalidParameterError(f"n must be at least 1, got {self.n}.")
        if self.alpha <= 0:
            raise InvalidParameterError(f"alpha must be positive, got {self.alpha}.")
        if self.m < 1:
            raise InvalidParameterError(f"floor(alpha * n) must be at least 1, got alpha={self.alpha}, n={self.n}.")
        if self.gamma < 0:
            raise InvalidParameterError(f"gamma must be non-negative, got {self.gamma}.")
        if self.p_edge > 1:
            raise InvalidParameterError(f"Edge probability gamma/n = {self.p_edge} exceeds 1.")
        return self


@dataclass(frozen=True)
class Neighborhood:
    root: int
    radius: int
    vars: FrozenSet[int]
    facs: FrozenSet[int]
    boundary: FrozenSet[int]
    dist: Tuple[Tuple[int, int], ...]
    # function nodes touching V(i, t-1); the ones explored on the way to the boundary
    inner_facs: FrozenSet[int] = frozenset()

    @property
    def interior(self) -> FrozenSet[int]:
        """Variables strictly inside the ball, V(i, t-1)."""
        return self.vars - self.boundary if self.radius > 0 else frozenset()

    @property
    def size(self) -> int:
        """Number of variable and function nodes in the ball."""
        return len(self.vars) + len(self.facs)


class Surgery(NamedTuple):
    """Result of removing nodes: the new graph plus old -> new id maps for kept nodes."""
    graph: FactorGraph
    var_map: Dict[int, int]
    fac_map: Dict[int, int]


def sample_graph(params: EnsembleParams, seed: int) -> FactorGraph:
    """
    Each of the n*m potential edges is present independently with probability gamma/n.
    The Bernoulli stream is drawn in row-major (i, a) order.
    """
    params.validate()
    rng = make_rng(seed)
    incidence = rng.random((params.n, params.m)) < params.p_edge
    return FactorGraph.from_incidence(incidence)


def sample_gw_tree(gamma: float, alpha: float, t: int, seed: int) -> Tuple[FactorGraph, int]:
    """
    Sample T(t): the root variable gets Poisson(gamma*alpha) function children, each function
    node gets Poisson(gamma) new variable children, repeated down to variable depth t.
    Nodes are numbered in breadth-first order, the root is variable 0.
    """
    if t < 0:
        raise InvalidParameterError(f"Tree depth must be non-negative, got {t}.")
    if gamma < 0 or alpha < 0:
        raise InvalidParameterError(f"gamma and alpha must be non-negative, got {gamma}, {alpha}.")
    rng = make_rng(seed)
    edges = []
    n, m = 1, 0
    frontier = [0]
    for _ in range(t):
        next_frontier = []
        for j in frontier:
            for _ in range(rng.poisson(gamma * alpha)):
                a = m
                m += 1
                edges.append((j, a))
                for _ in range(rng.poisson(gamma)):
                    child = n
                    n += 1
                    edges.append((child, a))
                    next_frontier.append(child)
        frontier = next_frontier
    return FactorGraph(n, m, edges), 0


def _var_distances(G: FactorGraph, i: int, limit: Optional[int] = None) -> Dict[int, int]:
    """Variable -> number of function nodes on a shortest path from i, up to ``limit``."""
    cutoff = None if limit is None else 2 * limit
    hops = nx.single_source_shortest_path_length(G.to_networkx(), i, cutoff=cutoff)
    return {node: h // 2 for node, h in hops.items() if node < G.n}


def neighborhood(G: FactorGraph, i: int, t: int) -> Neighborhood:
    """
    Ball of radius t around variable i. Its function nodes are all those whose whole
    neighborhood lies among the ball's variables, including function nodes sitting on the
    boundary only.
    """
    G.check_var(i)
    if t < 0:
        raise InvalidParameterError(f"Radius must be non-negative, got {t}.")
    dist = _var_distances(G, i, limit=t)
    candidates = {a for j in dist for a in G.adj_var[j]}
    # radius 0 is the lone root, without function nodes
    facs = {a for a in candidates if all(k in dist for k in G.adj_fac[a])} if t > 0 else set()
    inner_facs = {a for j, d in dist.items() if d < t for a in G.adj_var[j]}
    boundary = frozenset(j for j, d in dist.items() if d == t)
    return Neighborhood(
        root=i,
        radius=t,
        vars=frozenset(dist),
        facs=frozenset(facs),
        boundary=boundary,
        dist=tuple(sorted(dist.items())),
        inner_facs=frozenset(inner_facs),
    )


def distance(G: FactorGraph, i: int, j: int) -> Union[int, float]:
    """Number of function nodes on a shortest path between i and j; math.inf if disconnected."""
    G.check_var(i)
    G.check_var(j)
    if i == j:
        return 0
    try:
        return nx.shortest_path_length(G.to_networkx(), i, j) // 2
    except nx.NetworkXNoPath:
        return math.inf


def induced_subgraph(G: FactorGraph, keep_vars: Iterable[int]) -> Surgery:
    """
    Keep the given variables and every function node whose neighborhood lies inside them.
    Ids are re-indexed preserving order.
    """
    keep = sorted(set(keep_vars))
    for j in keep:
        G.check_var(j)
    keep_set = set(keep)
    var_map = {old: new for new, old in enumerate(keep)}
    kept_facs = [a for a in range(G.m) if all(j in keep_set for j in G.adj_fac[a])]
    fac_map = {old: new for new, old in enumerate(kept_facs)}
    edges = [(var_map[j], fac_map[a]) for a in kept_facs for j in G.adj_fac[a]]
    return Surgery(FactorGraph(len(keep), len(kept_facs), edges), var_map, fac_map)


def graph_surgery(G: FactorGraph, drop_var: Optional[int] = None, drop_fac: Optional[int] = None) -> Surgery:
    """
    Remove one node. Dropping variable j also removes every function node adjacent to j
    (the cavity graph with j taken out); dropping a function node removes only it.
    """
    if (drop_var is None) == (drop_fac is None):
        raise InvalidParameterError("Exactly one of drop_var and drop_fac must be set.")
    if drop_var is not None:
        G.check_var(drop_var)
        return induced_subgraph(G, (j for j in range(G.n) if j != drop_var))
    G.check_fac(drop_fac)
    var_map = {j: j for j in range(G.n)}
    fac_map = {a: (a if a < drop_fac else a - 1) for a in range(G.m) if a != drop_fac}
    edges = [(i, fac_map[a]) for i, a in G.edges() if a != drop_fac]
    return Surgery(FactorGraph(G.n, G.m - 1, edges), var_map, fac_map)


def residual_graph(G: FactorGraph, nb: Neighborhood) -> Surgery:
    """Graph on V minus V(i, t-1) with the function nodes not touching V(i, t-1)."""
    inner = nb.interior
    return induced_subgraph(G, (j for j in range(G.n) if j not in inner))


def residual_edge_frequency(G: FactorGraph, nb: Neighborhood) -> Tuple[int, int]:
    """
    (present edges, candidate pairs) over pairs (k, a) with k outside V(i, t-1) and a not touching
    V(i, t-1). Given the ball, each such pair is an edge with probability gamma/n.
    """
    inner = nb.interior
    outside_facs = [a for a in range(G.m) if a not in nb.inner_facs]
    pairs = (G.n - len(inner)) * len(outside_facs)
    present = sum(1 for a in outside_facs for k in G.adj_fac[a] if k not in inner)
    return present, pairs


# --- Tree shapes -------------------------------------------------------------------------

def _canonical(children: Sequence[tuple]) -> tuple:
    return tuple(sorted(children, key=lambda c: (_shape_size(c), repr(c))))


def _shape_size(shape: tuple) -> int:
    return 1 + sum(_shape_size(c) for c in shape)


def neighborhood_shape(G: FactorGraph, i: int, t: int) -> Optional[tuple]:
    """
    Canonical unlabeled shape of B(i, t) as nested tuples: a variable is the tuple of its
    function children, a function node the tuple of its variable children. Siblings are
    sorted by subtree size, then by their representation. The shape follows the exploration
    down to depth t, so function nodes lying on the boundary alone are not part of it.
    Returns None if B(i, t), those function nodes included, has a cycle.
    """
    nb = neighborhood(G, i, t)
    num_edges = sum(len(G.adj_fac[a]) for a in nb.facs)
    if num_edges != nb.size - 1:
        return None
    dist = dict(nb.dist)

    def var_shape(j: int, parent: Optional[int]) -> tuple:
        if dist[j] >= t:
            return ()
        return _canonical([fac_shape(a, j) for a in G.adj_var[j] if a != parent])

    def fac_shape(a: int, parent: int) -> tuple:
        return _canonical([var_shape(k, a) for k in G.adj_fac[a] if k != parent])

    return var_shape(i, None)


def shape_size(shape: tuple) -> int:
    """Total number of nodes (variables and function nodes) of a shape."""
    return _shape_size(shape)


def _multiplicity(children: Sequence[tuple]) -> float:
    counts: Dict[tuple, int] = {}
    for c in children:
        counts[c] = counts.get(c, 0) + 1
    value = math.factorial(len(children))
    for c in counts.values():
        value /= math.factorial(c)
    return value


def gw_shape_probability(shape: tuple, gamma: float, alpha: float, t: int) -> float:
    """Probability that T(t) has the given canonical shape."""
    def var_prob(s: tuple, depth: int) -> float:
        if depth >= t:
            return 1.0 if s == () else 0.0
        p = poisson.pmf(len(s), gamma * alpha) * _multiplicity(s)
        for child in s:
            p *= fac_prob(child, depth)
        return p

    def fac_prob(s: tuple, depth: int) -> float:
        p = poisson.pmf(len(s), gamma) * _multiplicity(s)
        for child in s:
            p *= var_prob(child, depth + 1)
        return p

    return float(var_prob(shape, 0))


def shapes_up_to(max_nodes: int, t: int) -> List[tuple]:
    """All canonical depth-t shapes with at most ``max_nodes`` nodes."""
    def var_shapes(budget: int, depth: int) -> List[tuple]:
        if budget < 1:
            return []
        if depth >= t:
            return [()]
        return [s for s in _multisets(lambda b: fac_shapes(b, depth), budget - 1)]

    def fac_shapes(budget: int, depth: int) -> List[tuple]:
        if budget < 1:
            return []
        return [s for s in _multisets(lambda b: var_shapes(b, depth + 1), budget - 1)]

    return sorted(set(var_shapes(max_nodes, 0)), key=lambda s: (_shape_size(s), repr(s)))


def _multisets(child_shapes, budget: int) -> List[tuple]:
    """Canonical tuples of children whose total size fits in ``budget``."""
    out = {()}
    frontier = {()}
    while frontier:
        grown = set()
        for base in frontier:
            used = sum(_shape_size(c) for c in base)
            for child in child_shapes(budget - used):
                cand = _canonical(base + (child,))
                if _shape_size_sum(cand) <= budget and cand not in out:
                    grown.add(cand)
        out |= grown
        frontier = grown
    return list(out)


def _shape_size_sum(children: tuple) -> int:
    return sum(_shape_size(c) for c in children)
