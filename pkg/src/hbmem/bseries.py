"""Tree-indexed series, composition and grafting, and the limiting coefficient series.

Normalization: a :class:`TreeSeries` with coefficients ``alpha`` represents

    alpha(empty) theta + sum_t h^{|t|} alpha(t) F(t)(theta)

over canonical trees ``t``, where ``F(t) = nabla^{deg+1} L[F(t_1), ..., F(t_deg)]``
is the elementary differential. The labeled-tree convention
``sum over labeled trees of h^{|t|}/|t|! c(t) F(t)`` corresponds to
``c(t) = sigma(t) alpha(t)`` because a shape has ``|t|!/sigma(t)`` labelings;
:meth:`TreeSeries.labeled` and :meth:`TreeSeries.from_labeled` convert.

Coefficients may be :class:`~hbmem.polynomials.BetaRational` (exact) or floats.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import CapabilityError, InvalidArgumentError
from .losses import DerivativeOracle
from .polynomials import BETA, ONE, BetaRational
from .trees import (
    LEAF,
    RootedTree,
    enumerate_markings,
    enumerate_trees,
    graft_at,
    symmetry_coefficient,
    vertex_paths,
)


def _is_zero(x) -> bool:
    return x.is_zero() if isinstance(x, BetaRational) else x == 0


class TreeSeries:
    """Truncated series over rooted trees.

    Args:
        coeffs: Map from tree to ``alpha`` coefficient; zero entries are dropped.
        order: Truncation order; trees with more vertices are discarded.
        empty: Coefficient of the identity term ``theta``.
    """

    def __init__(self, coeffs: dict[RootedTree, object] | None = None, order: int = 0, empty=0):
        self.order = int(order)
        self.empty = empty
        self.coeffs = {t: c for t, c in (coeffs or {}).items()
                       if t.vertex_count <= self.order and not _is_zero(c)}

    def __getitem__(self, t: RootedTree):
        return self.coeffs.get(t, 0)

    def items(self):
        return sorted(self.coeffs.items(), key=lambda kv: kv[0].canonical_key)

    def labeled(self, t: RootedTree):
        """Coefficient in the labeled convention, ``sigma(t) alpha(t)``."""
        return self[t] * symmetry_coefficient(t)

    @classmethod
    def from_labeled(cls, values: dict[RootedTree, object], order: int, empty=0) -> TreeSeries:
        """Build from labeled-convention coefficients ``c(t)``."""
        return cls({t: _div(c, symmetry_coefficient(t)) for t, c in values.items()}, order, empty)

    def homogeneous(self, m: int) -> TreeSeries:
        """Part made of trees with exactly ``m`` vertices."""
        return TreeSeries({t: c for t, c in self.coeffs.items() if t.vertex_count == m}, self.order)

    def truncate(self, order: int) -> TreeSeries:
        return TreeSeries(self.coeffs, min(order, self.order), self.empty)

    def __add__(self, other: TreeSeries) -> TreeSeries:
        out = dict(self.coeffs)
        for t, c in other.coeffs.items():
            out[t] = out[t] + c if t in out else c
        return TreeSeries(out, min(self.order, other.order), self.empty + other.empty)

    def __neg__(self) -> TreeSeries:
        return self.scale(-1)

    def __sub__(self, other: TreeSeries) -> TreeSeries:
        return self + (-other)

    def scale(self, s) -> TreeSeries:
        return TreeSeries({t: c * s for t, c in self.coeffs.items()}, self.order, self.empty * s)

    def map(self, fn: Callable) -> TreeSeries:
        """Apply ``fn`` to every coefficient, e.g. to evaluate at a numeric ``beta``."""
        return TreeSeries({t: fn(c) for t, c in self.coeffs.items()}, self.order,
                          fn(self.empty) if not isinstance(self.empty, int) else self.empty)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TreeSeries):
            return NotImplemented
        keys = set(self.coeffs) | set(other.coeffs)
        return self.empty == other.empty and all(_is_zero(self[t] - other[t]) for t in keys)

    def __repr__(self) -> str:
        body = ", ".join(f"{t}: {c}" for t, c in self.items())
        return f"TreeSeries(order={self.order}, empty={self.empty}, {{{body}}})"


def _div(c, k: int):
    if isinstance(c, BetaRational):
        return c / k
    if isinstance(c, int):
        from fractions import Fraction
        return Fraction(c, k)
    return c / k


def subtree_convolution(a: TreeSeries, c: TreeSeries) -> TreeSeries:
    """Composition ``B(c) o B(a)`` in the labeled convention.

    ``(a * c)(t) = c(empty) a(t) + sum over markings m of c(t_0^m) prod_i a(t_i^m)``
    and ``(a * c)(empty) = c(empty)``, where ``a(empty)`` multiplies the
    identity term of the inner map (normally 1).
    """
    order = min(a.order, c.order)
    out = {}
    for m in range(1, order + 1):
        for t in enumerate_trees(m):
            total = c.empty * a.labeled(t)
            for mk in enumerate_markings(t):
                term = c.labeled(mk.remainder)
                if _is_zero(term):
                    continue
                for s in mk.subtrees:
                    term = term * a.labeled(s)
                total = total + term
            out[t] = total
    return TreeSeries.from_labeled(out, order, c.empty)


def gradient_step_series(order: int) -> TreeSeries:
    """The series ``l`` of ``-h/(1 - beta) nabla L``: only the single vertex, ``-1/(1-beta)``."""
    return TreeSeries({LEAF: BetaRational((-1,), 1)}, order)


def solve_a_g(order: int) -> tuple[TreeSeries, TreeSeries]:
    """Fixed-point coefficients of the invariant-manifold expansion.

    Solves bottom-up in ``|t|``
    ``g(t) = a(t_1)..a(t_deg)/(1-beta)^2 - 1/(1-beta) sum_{m != empty} g(t_0^m) prod a(t_i^m)``
    with ``a(empty) = 1``, ``a(single) = -1/(1-beta)``, ``a(t) = beta g(t)``.

    Returns:
        ``(a, g)`` as exact series with ``a.empty == 1`` and ``g.empty == 0``.
    """
    if order > 8:
        raise InvalidArgumentError("solve_a_g supports order <= 8")
    a_lab: dict[RootedTree, BetaRational] = {LEAF: BetaRational((-1,), 1)}
    g_lab: dict[RootedTree, BetaRational] = {LEAF: BetaRational()}
    inv = BetaRational((1,), 1)
    for m in range(2, order + 1):
        for t in enumerate_trees(m):
            prod = ONE
            for c in t.children:
                prod = prod * a_lab[c]
            acc = prod * inv * inv
            for mk in enumerate_markings(t)[1:]:
                term = g_lab[mk.remainder]
                if term.is_zero():
                    continue
                for s in mk.subtrees:
                    term = term * a_lab[s]
                acc = acc - term * inv
            g_lab[t] = acc
            a_lab[t] = BETA * acc
    a = TreeSeries.from_labeled(a_lab, order, ONE)
    g = TreeSeries.from_labeled(g_lab, order, BetaRational())
    return a, g


def a_recursion_residual(a: TreeSeries, t: RootedTree) -> BetaRational:
    """Residual of the pure-``a`` rewriting of the fixed-point recursion at ``t``."""
    inv = BetaRational((1,), 1)
    prod = ONE
    for c in t.children:
        prod = prod * a.labeled(c)
    rhs = BETA * prod * inv * inv
    for mk in enumerate_markings(t)[1:]:
        if mk.remainder.vertex_count < 2:
            continue
        term = a.labeled(mk.remainder)
        for s in mk.subtrees:
            term = term * a.labeled(s)
        rhs = rhs - term * inv
    return a.labeled(t) - rhs


def graft(f: TreeSeries, b: TreeSeries) -> TreeSeries:
    """Lie derivative of the field ``f`` along ``b``: the series of ``f'(theta) b(theta)``.

    Each tree of ``b`` is attached to every vertex of each tree of ``f``; the
    identity term of ``f`` differentiates to ``b`` itself.

    Raises:
        InvalidArgumentError: If ``b`` has an identity term.
    """
    if not _is_zero(b.empty):
        raise InvalidArgumentError("the direction series must not contain the identity term")
    order = min(f.order, b.order)
    out: dict[RootedTree, object] = {}

    def add(t, c):
        out[t] = out[t] + c if t in out else c

    if not _is_zero(f.empty):
        for s, cs in b.coeffs.items():
            add(s, f.empty * cs)
    for t, ct in f.coeffs.items():
        for s, cs in b.coeffs.items():
            if t.vertex_count + s.vertex_count > order:
                continue
            w = ct * cs
            for p in vertex_paths(t):
                add(graft_at(t, p, s), w)
    return TreeSeries(out, order)


def memoryless_parts_from_a(a: TreeSeries) -> dict[int, TreeSeries]:
    """Split the limiting memoryless update ``B(a) - theta`` into homogeneous parts."""
    return {m: a.homogeneous(m) for m in range(1, a.order + 1)}


def limiting_memoryless_series(order: int) -> TreeSeries:
    """Limit ``n -> inf`` of ``sum_m h^m f_m^(n)``, i.e. ``B(a)`` without the identity term."""
    if order > 6:
        raise InvalidArgumentError("limiting series support order <= 6")
    a, _ = solve_a_g(order)
    return TreeSeries(a.coeffs, order)


def compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    """Ordered tuples of ``parts`` positive integers summing to ``total``."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def bea_series(parts: dict[int, TreeSeries], order: int) -> dict[int, TreeSeries]:
    """Modified-field coefficients whose time-``h`` flow reproduces a one-step map.

    Given ``theta -> theta + sum_j h^j f_j`` with homogeneous ``f_j``, returns
    ``fbar_j`` with
    ``fbar_j = f_j - sum_{i=2}^{j} 1/i! sum_{k_1+..+k_i=j} D_{k_1} .. D_{k_{i-1}} fbar_{k_i}``
    where ``D_k G`` grafts ``fbar_k`` onto ``G``.
    """
    fbar: dict[int, TreeSeries] = {}
    for j in range(1, order + 1):
        acc = parts.get(j, TreeSeries({}, order)).truncate(order)
        for i in range(2, j + 1):
            inv = math.factorial(i)
            for ks in compositions(j, i):
                term = fbar[ks[-1]]
                for k in reversed(ks[:-1]):
                    term = graft(term, fbar[k])
                acc = acc - _scale_div(term, inv)
        fbar[j] = TreeSeries(acc.coeffs, order)
    return fbar


def _scale_div(s: TreeSeries, k: int) -> TreeSeries:
    return TreeSeries({t: _div(c, k) for t, c in s.coeffs.items()}, s.order, s.empty)


def limiting_bea_series(order: int) -> TreeSeries:
    """Limit of the modified-field coefficients, ``sum_j h^{j-1} fbar_j`` stored as ``h^{|t|}`` terms."""
    if order > 6:
        raise InvalidArgumentError("limiting series support order <= 6")
    a, _ = solve_a_g(order)
    fbar = bea_series(memoryless_parts_from_a(a), order)
    out = TreeSeries({}, order)
    for s in fbar.values():
        out = out + s
    return out


def at_beta(s: TreeSeries, beta: float) -> TreeSeries:
    """Evaluate exact coefficients at a numeric ``beta``."""
    return TreeSeries({t: float(c(beta)) for t, c in s.coeffs.items()}, s.order,
                      float(s.empty(beta)) if isinstance(s.empty, BetaRational) else float(s.empty))


def elementary_differentials(trees: Iterable[RootedTree], theta, oracle: DerivativeOracle) -> dict[RootedTree, np.ndarray]:
    """``F(t)(theta)`` for the given trees and their subtrees.

    Raises:
        CapabilityError: If the oracle cannot supply a needed derivative order.
    """
    th = np.asarray(theta, dtype=float)
    memo: dict[RootedTree, np.ndarray] = {}

    def F(t: RootedTree) -> np.ndarray:
        if t not in memo:
            if t.degree + 1 > oracle.max_order:
                raise CapabilityError(f"tree {t} needs derivative order {t.degree + 1}")
            memo[t] = oracle.contract(th, t.degree + 1, [F(c) for c in t.children])
        return memo[t]

    for t in trees:
        F(t)
    return memo


def eval_series(s: TreeSeries, h: float, theta, oracle: DerivativeOracle) -> np.ndarray:
    """``alpha(empty) theta + sum_t h^{|t|} alpha(t) F(t)(theta)`` with numeric coefficients."""
    th = np.asarray(theta, dtype=float)
    F = elementary_differentials(s.coeffs, th, oracle)
    out = float(s.empty) * th
    for t, c in s.coeffs.items():
        out = out + h ** t.vertex_count * float(c) * F[t]
    return out
