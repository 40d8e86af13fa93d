"""Finite-history memoryless coefficients and tree expressions.

The production path evaluates the tree expressions

    E[t, l, n] = sum_{b=0}^{n-l} beta^b nabla^{deg+1} L^{(n-l-b)}[S_1(l+b), ..., S_deg(l+b)]

with ``S_i(L) = sum_{l'=1}^{L} E[t_i, l', n]`` by dynamic programming. The
backward form ``E[t, l] = X(l) + beta E[t, l+1]`` with
``X(j) = nabla^{deg+1} L^{(n-j)}[S_1(j), ...]`` needs one batched oracle call
per distinct loss and a linear filter, so a whole table costs ``O(n)``.

:class:`RecursiveCoefficients` implements the original recursion over index
sets, with finite-difference derivatives of the coefficients themselves. It
is slow and only meant as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import CapabilityError, InvalidArgumentError
from .losses import DerivativeOracle
from .trees import LEAF, Path, RootedTree, enumerate_markings, enumerate_trees, symmetry_coefficient

LossSequence = Callable[[int], DerivativeOracle]


def as_schedule(losses) -> LossSequence:
    """Wrap a single oracle as a constant loss sequence."""
    if isinstance(losses, DerivativeOracle):
        return lambda s: losses
    return losses


def _backward_filter(x: np.ndarray, beta: float) -> np.ndarray:
    # y[l] = x[l] + beta y[l+1], processed from the last row upward.
    if x.shape[0] == 0:
        return x
    return lfilter([1.0], [1.0, -beta], x[::-1], axis=0)[::-1]


@dataclass
class _Node:
    # Tree vertex with fixed extra arguments appended to its derivative.
    children: tuple
    extras: tuple = ()
    key: object = None


def _plain_node(t: RootedTree) -> _Node:
    return _Node(tuple(_plain_node(c) for c in t.children), (), t)


class CoefficientContext:
    """Evaluation state for one iteration index and one point.

    Args:
        beta: Momentum parameter.
        n: Iteration index (number of past gradients is ``n + 1``).
        losses: Oracle, or map from step index ``s`` to the oracle of ``L^(s)``.
        theta: Evaluation point.

    Tables of ``E[t, l, n]`` for ``l = 1..n`` are memoized per tree.
    """

    def __init__(self, beta: float, n: int, losses, theta):
        if not 0 <= beta < 1:
            raise InvalidArgumentError(f"beta must lie in [0, 1), got {beta}")
        if n < 0:
            raise InvalidArgumentError(f"n must be non-negative, got {n}")
        self.beta = float(beta)
        self.n = int(n)
        self.losses = as_schedule(losses)
        self.theta = np.asarray(theta, dtype=float)
        self.dim = self.theta.shape[-1]
        self._tables: dict = {}

    def loss(self, s: int) -> DerivativeOracle:
        return self.losses(s)

    def _x_values(self, n: int, order: int, dirs: Sequence[np.ndarray], extras: Sequence[np.ndarray]) -> np.ndarray:
        """Rows ``j = 1..n`` of ``nabla^order L^{(n-j)}(theta)[dirs[j-1]..., extras...]``."""
        out = np.empty((n, self.dim))
        groups: dict[int, tuple[DerivativeOracle, list[int]]] = {}
        for j in range(1, n + 1):
            oracle = self.loss(n - j)
            groups.setdefault(id(oracle), (oracle, []))[1].append(j)
        for oracle, js in groups.values():
            rows = np.asarray(js) - 1
            args = [d[rows] for d in dirs] + [np.broadcast_to(e, (len(js), self.dim)) for e in extras]
            val = oracle.contract(self.theta, order, args)
            out[rows] = np.broadcast_to(val, (len(js), self.dim))
        return out

    def _node_table(self, node: _Node, n: int) -> np.ndarray:
        # Returns an (n + 1, d) array whose row L is the prefix sum S(L); row 0 is zero.
        cache_key = (node.key, n) if node.key is not None and not node.extras else None
        if cache_key is not None and cache_key in self._tables:
            return self._tables[cache_key]
        child_prefix = [self._node_table(c, n)[1:] for c in node.children]
        order = len(node.children) + len(node.extras) + 1
        x = self._x_values(n, order, child_prefix, node.extras)
        e = _backward_filter(x, self.beta)
        prefix = np.zeros((n + 1, self.dim))
        np.cumsum(e, axis=0, out=prefix[1:])
        if cache_key is not None:
            self._tables[cache_key] = prefix
        return prefix

    def e_table(self, t: RootedTree) -> np.ndarray:
        """``E[t, l, n]`` for ``l = 1..n`` as an ``(n, d)`` array."""
        return np.diff(self._node_table(_plain_node(t), self.n), axis=0)

    def prefix_table(self, t: RootedTree) -> np.ndarray:
        """``sum_{l'<=L} E[t, l', n]`` for ``L = 0..n`` as an ``(n + 1, d)`` array."""
        return self._node_table(_plain_node(t), self.n)


def e_eval(ctx: CoefficientContext, t: RootedTree, l: int) -> np.ndarray:
    """``E[t, l, n](theta)`` for ``1 <= l <= n``."""
    if not 1 <= l <= ctx.n:
        raise InvalidArgumentError(f"need 1 <= l <= n = {ctx.n}, got l={l}")
    p = ctx.prefix_table(t)
    return p[l] - p[l - 1]


def e_direct(ctx: CoefficientContext, t: RootedTree, l: int) -> np.ndarray:
    """``E[t, l, n]`` by literal nested summation, memoized per ``(t, l)`` (tests only)."""
    key = ("direct", t, l)
    if key in ctx._tables:
        return ctx._tables[key]
    n, beta = ctx.n, ctx.beta
    out = np.zeros(ctx.dim)
    for b in range(n - l + 1):
        args = [sum((e_direct(ctx, c, l1) for l1 in range(1, l + b + 1)), np.zeros(ctx.dim)) for c in t.children]
        out += beta**b * ctx.loss(n - l - b).contract(ctx.theta, t.degree + 1, args)
    ctx._tables[key] = out
    return out


def f_treesum(ctx: CoefficientContext, m: int) -> np.ndarray:
    """Memoryless coefficient ``f_m^(n)(theta)`` as a sum over trees with ``m`` vertices."""
    if m < 1:
        raise InvalidArgumentError(f"m must be positive, got {m}")
    if m == 1:
        g = ctx.loss(ctx.n).grad(ctx.theta)
        if ctx.n == 0:
            return -g
        return -(g + ctx.beta * e_eval(ctx, LEAF, 1))
    if ctx.n == 0:
        return np.zeros(ctx.dim)
    total = np.zeros(ctx.dim)
    for t in enumerate_trees(m):
        total += e_eval(ctx, t, 1) / symmetry_coefficient(t)
    return -ctx.beta * total


def theta_tree(ctx: CoefficientContext, m: int, a: int) -> np.ndarray:
    """History term ``Theta_m^(n)[a] = sum_{l<=a} sum_t E[t, l, n] / sigma(t)``."""
    if not 1 <= a <= ctx.n:
        raise InvalidArgumentError(f"need 1 <= a <= n = {ctx.n}, got a={a}")
    total = np.zeros(ctx.dim)
    for t in enumerate_trees(m):
        total += ctx.prefix_table(t)[a] / symmetry_coefficient(t)
    return total


def _marked_node(ctx: CoefficientContext, t: RootedTree, marked: set, path: Path, l: int) -> _Node:
    kids = []
    extras = []
    for i, c in enumerate(t.children):
        cp = path + (i,)
        if cp in marked:
            extras.append(ctx.prefix_table(c)[l])
        else:
            kids.append(_marked_node(ctx, c, marked, cp, l))
    return _Node(tuple(kids), tuple(extras), None)


def marked_e(ctx: CoefficientContext, t: RootedTree, marking, l: int, a: int) -> np.ndarray:
    """Marked-tree expression: remainder evaluated at iteration ``n - l``, shifted ``a``.

    Every marked vertex contributes ``sum_{l'=1}^{l} E[cut subtree, l', n]`` as
    an extra argument to its parent's derivative.
    """
    marked = {p for p, _ in marking.cut_subtrees}
    node = _marked_node(ctx, t, marked, (), l)
    table = ctx._node_table(node, ctx.n - l)
    return table[a] - table[a - 1]


def marking_sum_residual(ctx: CoefficientContext, t: RootedTree, l: int, a: int) -> float:
    """Gap in ``E[t, l + a, n] = sum over markings of the marked expression``.

    Returns the max-norm difference divided by ``max(1, |E[t, l + a, n]|_max)``.
    """
    if l < 1 or a < 1 or l + a > ctx.n:
        raise InvalidArgumentError("need l, a >= 1 and l + a <= n")
    lhs = e_eval(ctx, t, l + a)
    rhs = sum((marked_e(ctx, t, mk, l, a) for mk in enumerate_markings(t)), np.zeros(ctx.dim))
    return _scaled_gap(lhs, rhs)


def _scaled_gap(lhs: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.max(np.abs(lhs - rhs)) / max(1.0, float(np.max(np.abs(lhs)))))


def one_step_residual(ctx: CoefficientContext, t: RootedTree, l: int) -> float:
    """Gap in ``nabla^{deg+1} L^{(n-l)}[S_i(l)] + beta E[t, l+1] = E[t, l]``.

    Both ``E`` values are computed by literal summation, independent of the
    dynamic program. Scaled like :func:`marking_sum_residual`.
    """
    if not 1 <= l < ctx.n:
        raise InvalidArgumentError("need 1 <= l < n")
    args = [sum((e_direct(ctx, c, l1) for l1 in range(1, l + 1)), np.zeros(ctx.dim)) for c in t.children]
    lhs = ctx.loss(ctx.n - l).contract(ctx.theta, t.degree + 1, args) + ctx.beta * e_direct(ctx, t, l + 1)
    return _scaled_gap(e_direct(ctx, t, l), lhs)


def marking_identity_check(ctx: CoefficientContext, t: RootedTree, l: int, a: int) -> float:
    """Largest residual of the marking-sum identity and the one-step recursion."""
    if t.vertex_count > 4:
        raise CapabilityError("marking identity check supports trees with at most 4 vertices")
    return max(marking_sum_residual(ctx, t, l, a), one_step_residual(ctx, t, l))


def index_sets(i: int, l: int) -> list[tuple[int, ...]]:
    """Tuples ``(k_0..k_l)`` with ``sum k_t = i`` and ``sum t k_t = l``.

    The weighted second constraint collects the ``h^l`` terms of a Taylor
    expansion in the history increments ``Theta_1, Theta_2, ...``, where
    ``Theta_{t+1}`` carries ``h^t`` relative to the leading increment.
    """
    out = []

    def rec(t: int, left_i: int, left_l: int, acc: list[int]) -> None:
        if t > l:
            if left_i == 0 and left_l == 0:
                out.append(tuple(acc))
            return
        for k in range(left_i + 1):
            if t * k > left_l:
                break
            acc.append(k)
            rec(t + 1, left_i - k, left_l - t * k, acc)
            acc.pop()

    rec(0, i, l, [])
    return out


def index_sets_unweighted(i: int, l: int) -> list[tuple[int, ...]]:
    """Index sets with the unweighted constraint ``k_1 + ... + k_l = l``."""
    out = []

    def rec(t: int, acc: list[int]) -> None:
        if t > l:
            if sum(acc) == i and sum(acc[1:]) == l:
                out.append(tuple(acc))
            return
        for k in range(i + 1):
            acc.append(k)
            rec(t + 1, acc)
            acc.pop()

    rec(0, [])
    return out


_STENCIL = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))


def fd_directional(func: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, dirs: Sequence[np.ndarray],
                   order_hint: int | None = None) -> np.ndarray:
    """Mixed directional derivative ``nabla^i F(theta)[u_1..u_i]`` by nested 4th-order central differences.

    The step for each level is ``eps^(1/(i+3)) (1 + |theta|)`` with ``i`` the
    total derivative order.

    Raises:
        CapabilityError: If more than two levels are requested or the step underflows.
    """
    i = len(dirs) if order_hint is None else order_hint
    if not dirs:
        return func(theta)
    if len(dirs) > 2:
        raise CapabilityError("finite differences are nested at most twice")
    u = np.asarray(dirs[0], dtype=float)
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        return np.zeros_like(func(theta))
    step = np.finfo(float).eps ** (1.0 / (i + 3)) * (1.0 + float(np.linalg.norm(theta)))
    if not np.isfinite(step) or step <= 0 or np.all(theta + step * u / norm == theta):
        raise CapabilityError("finite-difference step underflow")
    uh = u / norm
    acc = 0.0
    for k, w in _STENCIL:
        acc = acc + w * fd_directional(func, theta + k * step * uh, dirs[1:], i)
    return acc * (norm / step)


@dataclass
class RecursiveCoefficients:
    """Memoryless coefficients from the defining recursion.

    ``f_1^{(n)}`` and its derivatives come straight from the oracle. Derivatives
    of ``f_j`` for ``j >= 2`` use :func:`fd_directional`.

    Args:
        beta: Momentum parameter.
        losses: Oracle or loss sequence.
        weighted_index_sets: Use the Taylor-consistent index sets (default).
    """

    beta: float
    losses: object
    weighted_index_sets: bool = True
    _f_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.losses = as_schedule(self.losses)
        self._sets = index_sets if self.weighted_index_sets else index_sets_unweighted

    def f(self, j: int, n: int, theta) -> np.ndarray:
        """``f_j^{(n)}(theta)``."""
        th = np.asarray(theta, dtype=float)
        key = (j, n, th.tobytes())
        if key not in self._f_cache:
            self._f_cache[key] = self._f(j, n, th)
        return self._f_cache[key]

    def _f(self, j: int, n: int, th: np.ndarray) -> np.ndarray:
        beta = self.beta
        if j == 1:
            return -sum(beta**k * self.losses(n - k).grad(th) for k in range(n + 1))
        hist = _History(self, n, th)
        out = np.zeros_like(th)
        for k in range(1, n + 1):
            oracle = self.losses(n - k)
            for i in range(j):
                l = j - 1 - i
                for ks in self._sets(i, l):
                    args = [hist.theta(t + 1, k) for t, c in enumerate(ks) for _ in range(c)]
                    coef = 1.0 / math.prod(math.factorial(c) for c in ks)
                    out -= beta**k * coef * oracle.contract(th, i + 1, args)
        return out

    def grad_f(self, j: int, n: int, theta: np.ndarray, dirs: Sequence[np.ndarray]) -> np.ndarray:
        """``nabla^i f_j^{(n)}(theta)[dirs]`` with ``i = len(dirs)``."""
        if not dirs:
            return self.f(j, n, theta)
        if j == 1:
            return -sum(self.beta**k * self.losses(n - k).contract(theta, len(dirs) + 1, list(dirs))
                        for k in range(n + 1))
        return fd_directional(lambda x: self.f(j, n, x), theta, dirs)

    def history(self, m: int, n: int, a: int, theta) -> np.ndarray:
        """``Theta_m^{(n)}[a](theta)``."""
        return _History(self, n, np.asarray(theta, dtype=float)).theta(m, a)


class _History:
    # History terms Theta_m^{(n)}[a] at a fixed point, memoized by (m, a).

    def __init__(self, rc: RecursiveCoefficients, n: int, theta: np.ndarray):
        self.rc = rc
        self.n = n
        self.th = theta
        self.cache: dict = {}

    def theta(self, m: int, a: int) -> np.ndarray:
        if a == 0:
            return np.zeros_like(self.th)
        key = (m, a)
        if key not in self.cache:
            self.cache[key] = self.theta(m, a - 1) + self._increment(m, a)
        return self.cache[key]

    def _increment(self, m: int, s: int) -> np.ndarray:
        rc = self.rc
        out = np.zeros_like(self.th)
        for j in range(1, m + 1):
            for i in range(m - j + 1):
                l = m - j - i
                for ks in rc._sets(i, l):
                    args = [self.theta(t + 1, s) for t, c in enumerate(ks) for _ in range(c)]
                    coef = 1.0 / math.prod(math.factorial(c) for c in ks)
                    out -= coef * rc.grad_f(j, self.n - s, self.th, args)
        return out


F_RECURSIVE_MAX = 4


def f_recursive(ctx: CoefficientContext, m: int, weighted_index_sets: bool = True) -> np.ndarray:
    """``f_m^(n)(theta)`` from the defining recursion (``m <= 4``).

    Raises:
        CapabilityError: If ``m > 4``.
    """
    if m > F_RECURSIVE_MAX:
        raise CapabilityError(f"recursive coefficients are limited to m <= {F_RECURSIVE_MAX}")
    rc = RecursiveCoefficients(ctx.beta, ctx.losses, weighted_index_sets)
    return rc.f(m, ctx.n, ctx.theta)


def theta_history(ctx: CoefficientContext, m: int, a: int) -> np.ndarray:
    """``Theta_m^(n)[a]`` from the defining recursion."""
    if not 1 <= a <= ctx.n:
        raise InvalidArgumentError(f"need 1 <= a <= n = {ctx.n}, got a={a}")
    if m > F_RECURSIVE_MAX:
        raise CapabilityError(f"recursive history terms are limited to m <= {F_RECURSIVE_MAX}")
    return RecursiveCoefficients(ctx.beta, ctx.losses).history(m, ctx.n, a, ctx.theta)


def scalar_e_tables(beta: float, n: int, trees: Sequence[RootedTree]) -> dict[RootedTree, np.ndarray]:
    """Full-batch scalar weights ``e^(n)[t, l]`` with ``E[t, l, n] = e^(n)[t, l] F(t)``.

    With a single loss every ``E`` is a multiple of the elementary
    differential, and the multiple obeys the same recursion with
    contractions replaced by products.

    Returns:
        Map from tree to an array of length ``n + 1`` holding prefix sums
        ``sum_{l'<=L} e[t, l']`` for ``L = 0..n``.
    """
    out: dict[RootedTree, np.ndarray] = {}

    def table(t: RootedTree) -> np.ndarray:
        if t in out:
            return out[t]
        x = np.ones(n)
        for c in t.children:
            x = x * table(c)[1:]
        e = _backward_filter(x, beta)
        prefix = np.zeros(n + 1)
        prefix[1:] = np.cumsum(e)
        out[t] = prefix
        return prefix

    for t in trees:
        table(t)
    return out


def memoryless_tree_weights(beta: float, n: int, order: int) -> dict[RootedTree, float]:
    """Weights ``alpha(t)`` with ``f_m^(n) = sum_{|t|=m} alpha(t) F(t)`` for the full-batch case."""
    trees = [t for m in range(1, order + 1) for t in enumerate_trees(m)]
    tables = scalar_e_tables(beta, n, trees)
    weights = {LEAF: -(1 - beta ** (n + 1)) / (1 - beta)}
    for t in trees[1:]:
        e1 = tables[t][1] if n >= 1 else 0.0
        weights[t] = -beta * e1 / symmetry_coefficient(t)
    return weights
