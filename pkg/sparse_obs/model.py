"""
Finite-alphabet observation models: prior, the variable kernel R, the symmetric factor
kernels Q^(k), the theta-reveal perturbation, softness constants and built-in models.
"""
import itertools
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, Iterable, Mapping, Optional, Sequence

import numpy as np

from sparse_obs.errors import InvalidParameterError, MissingArityError, ModelValidationError
from sparse_obs.graph import FactorGraph
from sparse_obs.rng import make_rng

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
HIDDEN = -1  # reveal value standing for the symbol "*"
FLAG_NON_SOFT = "non-soft"
# Arities checked by validate_model for lazily generated kernel families
DEFAULT_CHECKED_ARITIES = range(0, 5)
EXHAUSTIVE_SYMMETRY_MAX_ARITY = 4
RANDOM_SYMMETRY_CHECKS = 64
BUILTIN_MODELS = ('group_testing', 'parity_bsc', 'mod2_storage')


@dataclass(frozen=True, eq=False)
class Prior:
    q: int
    probs: np.ndarray

    @classmethod
    def of(cls, probs: Sequence[float]) -> 'Prior':
        arr = np.asarray(probs, dtype=float)
        return cls(q=len(arr), probs=arr)

    @classmethod
    def bernoulli(cls, p_one: float) -> 'Prior':
        return cls.of([1.0 - p_one, p_one])

    def entropy(self) -> float:
        """Entropy H(X_1) in nats."""
        nz = self.probs[self.probs > 0]
        return float(-(nz * np.log(nz)).sum())


class DiscreteKernel:
    """
    Likelihood table L[y | x_1..x_k], stored densely with the output axis first:
    shape (s,) + (q,) * k.
    """
    def __init__(self, table, q: Optional[int] = None) -> None:
        self.table = np.asarray(table, dtype=float)
        if self.table.ndim < 1:
            raise InvalidParameterError("A kernel table needs at least the output axis.")
        self.arity = self.table.ndim - 1
        self.s = self.table.shape[0]
        self.q = q if q is not None else (self.table.shape[1] if self.arity > 0 else None)

    def likelihood(self, y: int, xs: Sequence[int]) -> float:
        return float(self.table[(y,) + tuple(xs)])

    def given(self, y: int) -> np.ndarray:
        """The k-dimensional array x -> L[y | x]."""
        return self.table[y]

    def rows(self) -> np.ndarray:
        """Table as (s, number of input tuples), input tuples in row-major order."""
        return self.table.reshape(self.s, -1)

    def __repr__(self):
        return f"DiscreteKernel(arity={self.arity}, s={self.s}, q={self.q})"


def constant_kernel(q: int, arity: int) -> DiscreteKernel:
    """Single-output kernel carrying no information."""
    return DiscreteKernel(np.ones((1,) + (q,) * arity), q=q)


def bsc_kernel(flip: float) -> DiscreteKernel:
    """Binary symmetric channel as an arity-1 kernel."""
    return DiscreteKernel([[1.0 - flip, flip], [flip, 1.0 - flip]], q=2)


class KernelFamily(Mapping):
    """
    Arity -> DiscreteKernel. Explicit kernels take precedence; missing arities are produced
    by ``factory`` (deterministic in k) and cached.
    """
    def __init__(self, kernels: Optional[Mapping[int, DiscreteKernel]] = None,
                 factory: Optional[Callable[[int], DiscreteKernel]] = None,
                 description: Optional[dict] = None) -> None:
        self._kernels: Dict[int, DiscreteKernel] = dict(kernels or {})
        self.factory = factory
        self.description = description
        self._lock = threading.Lock()

    def __getitem__(self, k: int) -> DiscreteKernel:
        k = int(k)
        if k in self._kernels:
            return self._kernels[k]
        if self.factory is None or k < 0:
            raise MissingArityError(k)
        with self._lock:
            if k not in self._kernels:
                self._kernels[k] = self.factory(k)
        return self._kernels[k]

    def __contains__(self, k) -> bool:
        return self.factory is not None and int(k) >= 0 or int(k) in self._kernels

    def __iter__(self):
        return iter(sorted(self._kernels))

    def __len__(self) -> int:
        return len(self._kernels)

    @property
    def is_lazy(self) -> bool:
        return self.factory is not None


@dataclass(frozen=True, eq=False)
class ObservationModel:
    prior: Prior
    R: DiscreteKernel
    Q: KernelFamily
    theta: float = 0.0
    flags: FrozenSet[str] = frozenset()
    name: str = "custom"
    params: Mapping = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.prior.q

    def kernel(self, k: int) -> DiscreteKernel:
        """Q^(k); degree-0 factors fall back to a constant kernel."""
        try:
            return self.Q[k]
        except MissingArityError:
            if k == 0:
                return constant_kernel(self.q, 0)
            raise

    def with_theta(self, theta: float) -> 'ObservationModel':
        return replace(self, theta=float(theta))

    def evidence(self, z: int, reveal: int) -> np.ndarray:
        """
        Unnormalized local weight p(x) R(z|x) I(reveal compatible). The (1-theta)/theta factor
        of R^theta does not depend on x and is dropped.
        """
        w = self.prior.probs * self.R.table[z]
        if reveal != HIDDEN:
            mask = np.zeros(self.q)
            mask[reveal] = 1.0
            w = w * mask
        return w

    @property
    def is_flagged_non_soft(self) -> bool:
        return FLAG_NON_SOFT in self.flags


@dataclass(frozen=True, eq=False)
class World:
    """
    Hidden assignment and observations. ``reveal[i]`` is x[i] or HIDDEN. ``reveal_u`` keeps
    the uniforms behind the reveal mask so the same world can be re-revealed at another theta.
    """
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    reveal: np.ndarray
    reveal_u: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.x)

    def at_theta(self, theta: float) -> 'World':
        if self.reveal_u is None:
            raise InvalidParameterError("World has no reveal uniforms; it cannot be re-revealed.")
        reveal = np.where(self.reveal_u < theta, self.x, HIDDEN)
        return replace(self, reveal=reveal)

    def masked(self, ids: Iterable[int]) -> 'World':
        """Reveal entries at ``ids`` replaced by "*"."""
        reveal = self.reveal.copy()
        reveal[list(ids)] = HIDDEN
        return replace(self, reveal=reveal)

    def restricted(self, var_map: Mapping[int, int], fac_map: Mapping[int, int]) -> 'World':
        """World on a surgery graph, given the old -> new id maps."""
        var_old = sorted(var_map, key=var_map.get)
        fac_old = sorted(fac_map, key=fac_map.get)
        return World(
            x=self.x[var_old],
            y=self.y[fac_old],
            z=self.z[var_old],
            reveal=self.reveal[var_old],
            reveal_u=None if self.reveal_u is None else self.reveal_u[var_old],
        )

    def check(self, G: FactorGraph) -> None:
        if len(self.x) != G.n or len(self.z) != G.n or len(self.reveal) != G.n or len(self.y) != G.m:
            raise InvalidParameterError(
                f"World sizes (x={len(self.x)}, y={len(self.y)}) do not match graph (n={G.n}, m={G.m})."
            )


# --- Validation -----------------------------------------------------------------------------

def _check_kernel(kernel: DiscreteKernel, q: int, label: str) -> None:
    if kernel.arity > 0 and any(d != q for d in kernel.table.shape[1:]):
        raise ModelValidationError(
            f"{label}: input alphabet size {kernel.table.shape[1:]} does not match prior size {q}.",
            constraint="alphabet", indices=label
        )
    if np.any(kernel.table < 0):
        bad = tuple(int(v) for v in np.argwhere(kernel.table < 0)[0])
        raise ModelValidationError(f"{label}: negative entry at {bad}.", constraint="nonnegative", indices=bad)
    sums = kernel.table.sum(axis=0)
    off = np.argwhere(np.abs(np.atleast_1d(sums) - 1.0) > STOCHASTIC_TOL)
    if len(off):
        row = tuple(int(v) for v in off[0]) if kernel.arity > 0 else ()
        total = float(np.atleast_1d(sums)[tuple(off[0])]) if kernel.arity > 0 else float(sums)
        raise ModelValidationError(
            f"{label}: row for inputs {row} sums to {total!r}, not 1.",
            constraint="stochastic", indices=row
        )
    _check_symmetry(kernel, label)


def _check_symmetry(kernel: DiscreteKernel, label: str) -> None:
    k = kernel.arity
    if k < 2:
        return
    if k <= EXHAUSTIVE_SYMMETRY_MAX_ARITY:
        perms = itertools.permutations(range(k))
    else:
        rng = make_rng(k)
        perms = (tuple(rng.permutation(k)) for _ in range(RANDOM_SYMMETRY_CHECKS))
    for perm in perms:
        permuted = np.transpose(kernel.table, (0,) + tuple(p + 1 for p in perm))
        diff = np.abs(permuted - kernel.table) > STOCHASTIC_TOL
        if diff.any():
            where = tuple(int(v) for v in np.argwhere(diff)[0])
            raise ModelValidationError(
                f"{label}: not symmetric under permutation {tuple(perm)}, "
                f"L[{where[0]} | {where[1:]}] differs.",
                constraint="symmetry", indices=where
            )


def validate_model(model: ObservationModel, arities: Optional[Iterable[int]] = None) -> ObservationModel:
    """
    Check every model invariant and raise ModelValidationError on the first violation.
    Explicit kernels are always checked; lazy families are checked for ``arities``.
    """
    prior = model.prior
    if prior.q < 2:
        raise ModelValidationError(f"Alphabet size must be at least 2, got {prior.q}.", constraint="alphabet")
    if np.any(prior.probs < 0) or abs(prior.probs.sum() - 1.0) > STOCHASTIC_TOL:
        raise ModelValidationError(f"Prior {prior.probs.tolist()} is not a distribution.", constraint="prior")
    if not 0.0 <= model.theta <= 1.0:
        raise ModelValidationError(f"theta must lie in [0, 1], got {model.theta}.", constraint="theta")
    if model.R.arity != 1:
        raise ModelValidationError(f"R must have arity 1, got {model.R.arity}.", constraint="arity", indices="R")
    _check_kernel(model.R, prior.q, "R")
    checked = set(model.Q)
    if model.Q.is_lazy:
        checked |= set(arities if arities is not None else DEFAULT_CHECKED_ARITIES)
    elif arities is not None:
        checked |= set(arities)
    for k in sorted(checked):
        kernel = model.kernel(k)
        if kernel.arity != k:
            raise ModelValidationError(
                f"Q^({k}) has arity {kernel.arity}.", constraint="arity", indices=f"Q^({k})"
            )
        _check_kernel(kernel, prior.q, f"Q^({k})")
    return model


# --- Sampling -------------------------------------------------------------------------------

def draw_columns(columns: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per column: ``columns`` is (s, N), ``u`` has N uniforms."""
    cdf = np.cumsum(columns, axis=0)
    out = (u[None, :] >= cdf).sum(axis=0)
    return np.minimum(out, columns.shape[0] - 1)


def sample_world(G: FactorGraph, model: ObservationModel, seed: int) -> World:
    """
    x iid from the prior, z_i ~ R(.|x_i), y_a ~ Q^(|da|)(.|x_da), reveal[i] = x[i] with
    probability theta. Draw order: x, z, y, reveal uniforms.
    """
    rng = make_rng(seed)
    x = rng.choice(model.q, size=G.n, p=model.prior.probs)
    z = draw_columns(model.R.table[:, x], rng.random(G.n)) if G.n else np.zeros(0, dtype=int)
    y = np.zeros(G.m, dtype=int)
    u_y = rng.random(G.m)
    for a, members in enumerate(G.adj_fac):
        kernel = model.kernel(len(members))
        column = kernel.table[(slice(None),) + tuple(x[list(members)])]
        y[a] = draw_columns(column[:, None], u_y[a:a + 1])[0]
    reveal_u = rng.random(G.n)
    reveal = np.where(reveal_u < model.theta, x, HIDDEN)
    return World(x=x.astype(int), y=y, z=np.asarray(z, dtype=int), reveal=reveal.astype(int), reveal_u=reveal_u)


# --- Softness -------------------------------------------------------------------------------

def softness_constant(kernel: DiscreteKernel) -> float:
    """
    max over input tuples x, x1, x2 of sum_y L(y|x1) / L(y|x2) * L(y|x); math.inf when some
    L(y|x2) = 0 while L(y|x1) > 0 or L(y|x) > 0.
    """
    L = kernel.rows()
    zero = L == 0
    # Any output y with a zero entry in one column and a positive entry in another breaks
    # absolute continuity for some (x1 or x, x2) pair.
    if np.any(zero.any(axis=1) & (~zero).any(axis=1)):
        return math.inf
    best = 0.0
    n_inputs = L.shape[1]
    for x1 in range(n_inputs):
        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = np.where(zero, 0.0, L[:, [x1]] / np.where(zero, 1.0, L))
        best = max(best, float((ratio.T @ L).max()))
    return best


def model_softness(model: ObservationModel, max_arity: int = 4) -> float:
    """Softness of the unperturbed model: R and Q^(k) for 1 <= k <= max_arity."""
    values = [softness_constant(model.R)]
    for k in range(1, max_arity + 1):
        try:
            values.append(softness_constant(model.kernel(k)))
        except MissingArityError:
            continue
    return max(values)


# --- Built-in models ------------------------------------------------------------------------

def _input_sums(k: int) -> np.ndarray:
    return np.indices((2,) * k).sum(axis=0)


def group_testing_kernel(k: int, f: float, fp: float) -> DiscreteKernel:
    """OR of the inputs; a positive pool reads 0 w.p. f, a negative pool reads 1 w.p. fp."""
    positive = _input_sums(k) > 0
    p_one = np.where(positive, 1.0 - f, fp)
    return DiscreteKernel(np.stack([1.0 - p_one, p_one]), q=2)


def parity_kernel(k: int, p: float) -> DiscreteKernel:
    """XOR of the inputs through a BSC(p)."""
    parity = _input_sums(k) % 2
    p_one = np.where(parity == 1, 1.0 - p, p)
    return DiscreteKernel(np.stack([1.0 - p_one, p_one]), q=2)


def _rate(params: Mapping, key: str, default: float) -> float:
    value = float(params.get(key, default))
    if not 0.0 <= value <= 1.0:
        raise InvalidParameterError(f"Parameter '{key}' must lie in [0, 1], got {value}.")
    return value


def builtin_model(name: str, params: Optional[Mapping] = None) -> ObservationModel:
    """
    Binary built-in models:

    group_testing   Y_a = OR of inputs; params f (false negative), fp (false positive, default f)
    parity_bsc      Y_a = XOR of inputs through BSC(p)
    mod2_storage    parity_bsc with p = 0

    Common params: prior (P{X=1}, default 0.5), theta (default 0), r (BSC side channel
    for R; absent means R carries no information).
    """
    params = dict(params or {})
    if name not in BUILTIN_MODELS:
        raise InvalidParameterError(f"Unknown built-in model '{name}'. Known: {', '.join(BUILTIN_MODELS)}.")
    prior_one = _rate(params, 'prior', 0.5)
    if prior_one in (0.0, 1.0):
        raise InvalidParameterError(f"Parameter 'prior' must lie strictly inside (0, 1), got {prior_one}.")
    theta = _rate(params, 'theta', 0.0)

    if name == 'group_testing':
        f = _rate(params, 'f', 0.0)
        fp = _rate(params, 'fp', f)
        factory = lambda k: group_testing_kernel(k, f, fp)
    elif name == 'parity_bsc':
        p = _rate(params, 'p', 0.0)
        factory = lambda k: parity_kernel(k, p)
    else:
        params['p'] = 0.0
        factory = lambda k: parity_kernel(k, 0.0)

    R = bsc_kernel(_rate(params, 'r', 0.0)) if 'r' in params else constant_kernel(2, 1)
    model = ObservationModel(
        prior=Prior.bernoulli(prior_one),
        R=R,
        Q=KernelFamily(factory=factory, description={'builtin': name, 'params': params}),
        theta=theta,
        name=name,
        params=params,
    )
    if math.isinf(model_softness(model)):
        logger.warning("Built-in model '%s' with params %s is not soft; bound checks will refuse it.",
                       name, params)
        model = replace(model, flags=model.flags | {FLAG_NON_SOFT})
    return model
