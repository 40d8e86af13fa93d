"""Exact arithmetic in the momentum parameter and closed-form coefficient families.

Every coefficient family here is a rational function of ``beta`` whose
denominator is a power of ``1 - beta``. :class:`BetaRational` stores exactly
that shape with :class:`fractions.Fraction` numerator coefficients.
:class:`ShiftPolynomial` is a polynomial in an integer shift variable ``l``
with ``BetaRational`` coefficients; it carries the exponentially weighted tail
sums that define the tree coefficients ``e_{t,l}``.

Infinite sums ``sum_b beta^b P(l + b)`` are evaluated exactly through the
identity ``sum_b beta^b C(b + j, j) = (1 - beta)^{-(j + 1)}``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, Union

from .errors import InvalidArgumentError
from .trees import RootedTree

Scalar = Union[int, Fraction]
PolyCoeffs = tuple[Fraction, ...]


def _trim(c: Iterable[Scalar]) -> PolyCoeffs:
    out = [Fraction(x) for x in c]
    while out and out[-1] == 0:
        out.pop()
    return tuple(out)


def _padd(a: PolyCoeffs, b: PolyCoeffs) -> PolyCoeffs:
    n = max(len(a), len(b))
    return _trim((a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(n))


def _pscale(a: PolyCoeffs, s: Scalar) -> PolyCoeffs:
    return _trim(x * s for x in a)


def _pmul(a: PolyCoeffs, b: PolyCoeffs) -> PolyCoeffs:
    if not a or not b:
        return ()
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return _trim(out)


def _ppow(a: PolyCoeffs, k: int) -> PolyCoeffs:
    out: PolyCoeffs = (Fraction(1),)
    for _ in range(k):
        out = _pmul(out, a)
    return out


def _peval(a: PolyCoeffs, x):
    acc = 0 * x
    for c in reversed(a):
        acc = acc * x + c
    return acc


def _pdiv_linear(a: PolyCoeffs, root: Scalar) -> tuple[PolyCoeffs, Fraction]:
    """Synthetic division by ``(x - root)``; returns quotient and remainder."""
    if not a:
        return (), Fraction(0)
    q = [Fraction(0)] * (len(a) - 1)
    acc = Fraction(0)
    for i in range(len(a) - 1, 0, -1):
        acc = acc * root + a[i]
        q[i - 1] = acc
    rem = acc * root + a[0]
    return _trim(q), rem


def _one_minus_beta_power(k: int) -> PolyCoeffs:
    return _ppow((Fraction(1), Fraction(-1)), k)


class BetaRational:
    """Exact value ``numerator(beta) / (1 - beta)^k``.

    The representation is normalized so that the numerator is not divisible by
    ``1 - beta`` unless ``k == 0``; equality is then structural.

    Args:
        numerator: Coefficients in increasing powers of ``beta``.
        k: Power of ``1 - beta`` in the denominator (may be passed negative;
            it is absorbed into the numerator).
    """

    __slots__ = ("num", "k")

    def __init__(self, numerator: Iterable[Scalar] = (), k: int = 0):
        num = _trim(numerator)
        if k < 0:
            num = _pmul(num, _one_minus_beta_power(-k))
            k = 0
        while k > 0 and num:
            q, r = _pdiv_linear(num, 1)
            if r != 0:
                break
            # Dividing by (beta - 1) rather than (1 - beta) flips the sign.
            num = _pscale(q, -1)
            k -= 1
        if not num:
            k = 0
        self.num = num
        self.k = k

    @classmethod
    def const(cls, c: Scalar) -> BetaRational:
        return cls((c,))

    @classmethod
    def beta(cls) -> BetaRational:
        return cls((0, 1))

    @classmethod
    def from_poly_over(cls, num: Sequence[Scalar], denom_roots: dict[Scalar, int]) -> BetaRational:
        """Divide a polynomial exactly by ``prod (beta - r)^mult`` for roots other than 1.

        Raises:
            InvalidArgumentError: If the division is not exact.
        """
        p = _trim(num)
        for r, mult in denom_roots.items():
            for _ in range(mult):
                p, rem = _pdiv_linear(p, r)
                if rem != 0:
                    raise InvalidArgumentError(f"numerator not divisible by (beta - {r})")
        return cls(p)

    @staticmethod
    def _coerce(x) -> BetaRational:
        if isinstance(x, BetaRational):
            return x
        if isinstance(x, (int, Fraction)):
            return BetaRational((x,))
        return NotImplemented

    def __add__(self, other) -> BetaRational:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        k = max(self.k, o.k)
        a = _pmul(self.num, _one_minus_beta_power(k - self.k))
        b = _pmul(o.num, _one_minus_beta_power(k - o.k))
        return BetaRational(_padd(a, b), k)

    __radd__ = __add__

    def __neg__(self) -> BetaRational:
        return BetaRational(_pscale(self.num, -1), self.k)

    def __sub__(self, other) -> BetaRational:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other) -> BetaRational:
        return (-self) + other

    def __mul__(self, other) -> BetaRational:
        if isinstance(other, (int, Fraction)):
            return BetaRational(_pscale(self.num, other), self.k)
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return BetaRational(_pmul(self.num, o.num), self.k + o.k)

    __rmul__ = __mul__

    def __truediv__(self, other) -> BetaRational:
        if isinstance(other, (int, Fraction)):
            return BetaRational(_pscale(self.num, Fraction(1) / Fraction(other)), self.k)
        return NotImplemented

    def __pow__(self, e: int) -> BetaRational:
        out = BetaRational.const(1)
        for _ in range(e):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.num == o.num and self.k == o.k

    def __hash__(self) -> int:
        return hash((self.num, self.k))

    def is_zero(self) -> bool:
        return not self.num

    def divide_by_beta(self) -> BetaRational:
        """Exact division by ``beta``.

        Raises:
            InvalidArgumentError: If the numerator has a constant term.
        """
        if self.num and self.num[0] != 0:
            raise InvalidArgumentError("value is not divisible by beta")
        return BetaRational(self.num[1:], self.k)

    def __call__(self, beta):
        """Evaluate at a float, Fraction or array."""
        return _peval(self.num, beta) / (1 - beta) ** self.k

    def numerator_string(self) -> str:
        return poly_string(self.num)

    def __str__(self) -> str:
        s = poly_string(self.num)
        if self.k == 0:
            return s
        if len([c for c in self.num if c]) > 1 or "/" in s:
            s = f"({s})"
        den = "(1-b)" if self.k == 1 else f"(1-b)^{self.k}"
        return f"{s}/{den}"

    def __repr__(self) -> str:
        return f"BetaRational({self})"


def poly_string(coeffs: Sequence[Fraction], var: str = "b") -> str:
    """Format a polynomial like ``1+3b+b^2`` (increasing powers)."""
    parts = []
    for i, c in enumerate(coeffs):
        if c == 0:
            continue
        mono = "" if i == 0 else (var if i == 1 else f"{var}^{i}")
        mag = abs(c)
        if mono and mag == 1:
            body = mono
        elif mono:
            body = f"{mag}*{mono}" if mag.denominator != 1 else f"{mag}{mono}"
        else:
            body = str(mag)
        sign = "-" if c < 0 else "+"
        parts.append((sign, body))
    if not parts:
        return "0"
    out = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for sign, body in parts[1:]:
        out += sign + body
    return out


ZERO = BetaRational()
ONE = BetaRational.const(1)
BETA = BetaRational.beta()


class ShiftPolynomial:
    """Polynomial in the shift variable ``l`` with :class:`BetaRational` coefficients.

    Attributes:
        coeffs: ``coeffs[i]`` multiplies ``l**i``.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Iterable = ()):
        c = [BetaRational._coerce(x) for x in coeffs]
        while c and c[-1].is_zero():
            c.pop()
        self.coeffs = tuple(c)

    @classmethod
    def const(cls, c) -> ShiftPolynomial:
        return cls([c])

    @classmethod
    def monomial(cls, power: int, c=1) -> ShiftPolynomial:
        return cls([ZERO] * power + [c])

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __add__(self, other) -> ShiftPolynomial:
        if not isinstance(other, ShiftPolynomial):
            other = ShiftPolynomial.const(other)
        n = max(len(self.coeffs), len(other.coeffs))
        a = self.coeffs + (ZERO,) * (n - len(self.coeffs))
        b = other.coeffs + (ZERO,) * (n - len(other.coeffs))
        return ShiftPolynomial(x + y for x, y in zip(a, b))

    __radd__ = __add__

    def __neg__(self) -> ShiftPolynomial:
        return ShiftPolynomial(-c for c in self.coeffs)

    def __sub__(self, other) -> ShiftPolynomial:
        return self + (-other)

    def __mul__(self, other) -> ShiftPolynomial:
        if not isinstance(other, ShiftPolynomial):
            return ShiftPolynomial(c * other for c in self.coeffs)
        if not self.coeffs or not other.coeffs:
            return ShiftPolynomial()
        out = [ZERO] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, x in enumerate(self.coeffs):
            for j, y in enumerate(other.coeffs):
                out[i + j] = out[i + j] + x * y
        return ShiftPolynomial(out)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, ShiftPolynomial):
            other = ShiftPolynomial.const(other)
        return self.coeffs == other.coeffs

    def __hash__(self) -> int:
        return hash(self.coeffs)

    def at(self, l: int) -> BetaRational:
        """Exact value at an integer shift."""
        acc = ZERO
        for c in reversed(self.coeffs):
            acc = acc * l + c
        return acc

    def __call__(self, l, beta):
        """Numeric value at shift ``l`` and momentum ``beta``."""
        acc = 0.0
        for c in reversed(self.coeffs):
            acc = acc * l + c(beta)
        return acc

    def prefix_sum(self) -> ShiftPolynomial:
        """Polynomial ``Q`` with ``Q(L) = sum_{j=1}^{L} P(j)`` for all ``L >= 0``."""
        out = ShiftPolynomial()
        for k, c in enumerate(self.coeffs):
            out = out + ShiftPolynomial(faulhaber(k)) * c
        return out

    def __str__(self) -> str:
        terms = []
        for i, c in enumerate(self.coeffs):
            if c.is_zero():
                continue
            mono = "" if i == 0 else ("l" if i == 1 else f"l^{i}")
            terms.append(f"[{c}]{('*' + mono) if mono else ''}")
        return " + ".join(terms) if terms else "0"

    def __repr__(self) -> str:
        return f"ShiftPolynomial({self})"


@lru_cache(maxsize=None)
def faulhaber(k: int) -> tuple[Fraction, ...]:
    """Coefficients in ``L`` of ``sum_{j=1}^{L} j^k``.

    Uses ``j^k = sum_i S(k, i) i! C(j, i)`` and ``sum_{j=0}^{L} C(j, i) = C(L + 1, i + 1)``.
    """
    if k == 0:
        return (Fraction(0), Fraction(1))
    out: PolyCoeffs = ()
    for i in range(1, k + 1):
        s = _stirling2(k, i) * math.factorial(i)
        out = _padd(out, _pscale(_binomial_poly(i + 1, shift=1), s))
    return out


@lru_cache(maxsize=None)
def _stirling2(n: int, k: int) -> int:
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * _stirling2(n - 1, k) + _stirling2(n - 1, k - 1)


@lru_cache(maxsize=None)
def _binomial_poly(j: int, shift: int = 0) -> PolyCoeffs:
    """Coefficients in ``x`` of ``C(x + shift, j)``."""
    out: PolyCoeffs = (Fraction(1),)
    for r in range(j):
        out = _pmul(out, (Fraction(shift - r), Fraction(1)))
    return _pscale(out, Fraction(1, math.factorial(j)))


@lru_cache(maxsize=None)
def power_moment(i: int) -> BetaRational:
    """Exact ``sum_{b>=0} beta^b b^i``.

    Writes ``b^i`` in the basis ``C(b + j, j)``, whose weighted sums are
    ``(1 - beta)^{-(j + 1)}``.
    """
    # Solve b^i = sum_j w_j C(b + j, j) by matching values at b = -1, -2, ...
    # where C(b + j, j) vanishes for j < -b, giving a triangular system.
    w: list[Fraction] = []
    for j in range(i + 1):
        b = -j - 1
        val = Fraction(b) ** i
        for jj in range(j):
            val -= w[jj] * _peval(_binomial_poly(jj, shift=jj), Fraction(b))
        w.append(val / _peval(_binomial_poly(j, shift=j), Fraction(b)))
    out = ZERO
    for j, wj in enumerate(w):
        if wj:
            out = out + BetaRational((wj,), j + 1)
    return out


def exp_sum(p: ShiftPolynomial) -> ShiftPolynomial:
    """Exact ``S[P](l) = sum_{b>=0} beta^b P(l + b)``."""
    out = [ZERO] * max(len(p.coeffs), 1)
    for k, c in enumerate(p.coeffs):
        # (l + b)^k = sum_i C(k, i) l^(k - i) b^i
        for i in range(k + 1):
            out[k - i] = out[k - i] + c * power_moment(i) * math.comb(k, i)
    return ShiftPolynomial(out)


def finite_exp_sum(values: Sequence[BetaRational]) -> BetaRational:
    """``sum_b beta^b values[b]`` for a finite list."""
    acc = ZERO
    for v in reversed(values):
        acc = acc * BETA + v
    return acc


E_COEFFICIENT_MAX = 8


@lru_cache(maxsize=None)
def _e_coefficient(t: RootedTree) -> ShiftPolynomial:
    if not t.children:
        return ShiftPolynomial.const(ONE)
    prod = ShiftPolynomial.const(ONE)
    for c in t.children:
        prod = prod * _e_coefficient(c).prefix_sum()
    return exp_sum(prod) * BetaRational((1,), -(len(t.children) + 1))


def e_coefficient(t: RootedTree, symbolic_l: bool = True, l: int | None = None):
    """Limit coefficient ``e_{t,l}`` of the tree expression as ``n`` grows.

    ``e_{t,l} = (1 - beta)^{deg + 1} sum_b beta^b prod_i sum_{l1=1}^{l+b} e_{t_i,l1}``
    with ``e = 1`` on a single vertex.

    Args:
        t: Tree with at most ``E_COEFFICIENT_MAX`` vertices.
        symbolic_l: Return the polynomial in ``l`` when true.
        l: Shift at which to evaluate when ``symbolic_l`` is false.

    Returns:
        A :class:`ShiftPolynomial`, or a :class:`BetaRational` at ``l``.
    """
    if t.vertex_count > E_COEFFICIENT_MAX:
        raise InvalidArgumentError(f"tree too large for e_coefficient (max {E_COEFFICIENT_MAX})")
    poly = _e_coefficient(t)
    if symbolic_l:
        return poly
    if l is None or l < 1:
        raise InvalidArgumentError("a shift l >= 1 is required when symbolic_l is false")
    return poly.at(l)


def _check_index(m: int, name: str = "m") -> None:
    if not isinstance(m, int) or m < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {m!r}")


def narayana(m: int) -> BetaRational:
    """Narayana polynomial ``N_m = sum_k (1/m) C(m,k) C(m,k-1) beta^(m-k)``."""
    _check_index(m)
    c = [Fraction(0)] * m
    for k in range(1, m + 1):
        c[m - k] += Fraction(math.comb(m, k) * math.comb(m, k - 1), m)
    return BetaRational(c)


def eulerian(m: int) -> BetaRational:
    """Eulerian polynomial ``A_m = (1 - beta)^{m+1} sum_{j>=1} j^m beta^(j-1)``.

    The tail sum equals ``sum_b beta^b (1 + b)^m``, i.e. ``exp_sum(l^m)`` at ``l = 1``.
    """
    _check_index(m)
    return exp_sum(ShiftPolynomial.monomial(m, ONE)).at(1) * BetaRational((1,), -(m + 1))


@lru_cache(maxsize=None)
def v_inf(m: int) -> BetaRational:
    """Limit principal coefficient ``v_m`` via its quadratic recursion."""
    _check_index(m)
    if m == 1:
        return BetaRational((1,), 1)
    acc = v_inf(m - 1)
    conv = ZERO
    for j in range(1, m):
        conv = conv + v_inf(j) * v_inf(m - j)
    # v_m = v_{m-1}/(1-beta) + beta/(1-beta) sum_{j=1}^{m-1} v_j v_{m-j}
    return (acc + BETA * conv) * BetaRational((1,), 1)


@lru_cache(maxsize=None)
def _v_table(m: int, n: int) -> tuple[BetaRational, ...]:
    # Entry l - 1 holds v_{m,l}^{(n)} for l = 1..n (index n is the zero tail).
    if m == 1:
        inner = [ONE] * n
    else:
        prev = _v_table(m - 1, n)
        inner = []
        acc = ZERO
        for l in range(1, n + 1):
            acc = acc + prev[l - 1]
            inner.append(acc)
    out = [ZERO] * (n + 1)
    for l in range(n, 0, -1):
        out[l - 1] = inner[l - 1] + BETA * out[l]
    return tuple(out[:n])


def v_finite(m: int, n: int, l: int = 1) -> BetaRational:
    """Finite-history principal coefficient ``v_{m,l}^{(n)}``.

    ``v_{1,l} = sum_{b=0}^{n-l} beta^b`` and
    ``v_{m,l} = sum_{b=0}^{n-l} beta^b sum_{l1=1}^{l+b} v_{m-1,l1}``.
    """
    _check_index(m)
    _check_index(n, "n")
    if not isinstance(l, int) or not 1 <= l <= n:
        raise InvalidArgumentError(f"need 1 <= l <= n, got l={l!r}, n={n}")
    return _v_table(m, n)[l - 1]


def q_finite(m: int, l: int, n: int) -> BetaRational:
    """``sum_{b=0}^{n-l} beta^b (sum_{l1=1}^{l+b} (1 - beta^(n-l1+1))/(1 - beta))^{m-1}``."""
    _check_index(m)
    _check_index(n, "n")
    if not isinstance(l, int) or not 1 <= l <= n:
        raise InvalidArgumentError(f"need 1 <= l <= n, got l={l!r}, n={n}")
    geo = [v_finite(1, n, l1) for l1 in range(1, n + 1)]
    terms = []
    for b in range(n - l + 1):
        inner = ZERO
        for l1 in range(1, l + b + 1):
            inner = inner + geo[l1 - 1]
        terms.append(inner ** (m - 1))
    return finite_exp_sum(terms)


def q_inf(m: int, l: int | None = None):
    """Limit ``(1 - beta)^{-(m-1)} sum_b beta^b (l + b)^(m-1)`` as a polynomial in ``l``."""
    _check_index(m)
    poly = exp_sum(ShiftPolynomial.monomial(m - 1, ONE)) * BetaRational((1,), m - 1)
    return poly if l is None else poly.at(l)


def _series_mul(a: Sequence[BetaRational], b: Sequence[BetaRational], order: int) -> list[BetaRational]:
    out = [ZERO] * (order + 1)
    for i, x in enumerate(a[: order + 1]):
        if x.is_zero():
            continue
        for j, y in enumerate(b[: order + 1 - i]):
            out[i + j] = out[i + j] + x * y
    return out


def _log_composition(p: Sequence[BetaRational], m: int) -> BetaRational:
    # [x^m] of sum_l (-1)^(l+1)/l P(x)^l with P = sum_{k>=1} p_k x^k.
    poly = [ZERO] + list(p[1 : m + 1])
    power = [ONE] + [ZERO] * m
    total = ZERO
    for l in range(1, m + 1):
        power = _series_mul(power, poly, m)
        total = total + power[m] * Fraction((-1) ** (l + 1), l)
    return total


@lru_cache(maxsize=None)
def z_inf(m: int) -> BetaRational:
    """Limit principal-flow coefficient via the signed composition sum.

    ``z_m = sum_l (-1)^(l+1)/l sum_{k_1+..+k_l=m} prod p_{k_i}`` with
    ``p_1 = -1/(1-beta)`` and ``p_k = -beta v_k`` for ``k >= 2``.
    """
    _check_index(m)
    p = [ZERO, BetaRational((-1,), 1)] + [-(BETA * v_inf(k)) for k in range(2, m + 1)]
    return _log_composition(p, m)


def z_finite(m: int, n: int) -> BetaRational:
    """Finite-``n`` analogue of :func:`z_inf` using ``v_k^{(n)}``."""
    _check_index(m)
    _check_index(n, "n")
    p = [ZERO, -v_finite(1, n + 1, 1)] + [-(BETA * v_finite(k, n, 1)) for k in range(2, m + 1)]
    return _log_composition(p, m)


GENERATING_SERIES_MAX = 16


def _sqrt_discriminant(order: int) -> list[BetaRational]:
    # Power series of sqrt((1 - beta - x)^2 - 4 beta x) with constant term 1 - beta.
    one_m_b = BetaRational((1, -1))
    d = [one_m_b * one_m_b, BetaRational((-2, -2)), ONE] + [ZERO] * order
    s = [one_m_b] + [ZERO] * order
    inv_2s0 = BetaRational((Fraction(1, 2),), 1)
    for k in range(1, order + 1):
        acc = d[k]
        for j in range(1, k):
            acc = acc - s[j] * s[k - j]
        s[k] = acc * inv_2s0
    return s


def generating_series(which: str, order: int) -> list[BetaRational]:
    """Exact Taylor coefficients ``0..order`` of a generating function.

    Args:
        which: ``"g"`` for ``(1 - beta - x - sqrt(D)) / (2 beta x)``,
            ``"sigma"`` for ``2 / (1 - beta + x + sqrt(D))`` and ``"gbar"`` for
            ``log((1 + beta - x + sqrt(D)) / 2) / x``, where
            ``D = (1 - beta - x)^2 - 4 beta x``.
        order: Highest coefficient index, at most ``GENERATING_SERIES_MAX``.

    The coefficients come from formal square root, reciprocal and logarithm
    recurrences applied to the closed forms, independent of the ``v`` and
    ``z`` recursions they are compared against.
    """
    if not isinstance(order, int) or not 0 <= order <= GENERATING_SERIES_MAX:
        raise InvalidArgumentError(f"order must be in 0..{GENERATING_SERIES_MAX}")
    s = _sqrt_discriminant(order + 1)
    if which == "g":
        # numerator 1 - beta - x - s(x) starts at x^1
        num = [ZERO] * (order + 2)
        for k in range(1, order + 2):
            num[k] = -s[k] - (ONE if k == 1 else ZERO)
        return [(num[k + 1] / 2).divide_by_beta() for k in range(order + 1)]
    if which == "sigma":
        q = [s[0] + BetaRational((1, -1)), s[1] + 1] + s[2 : order + 1]
        inv_q0 = BetaRational((Fraction(1, 2),), 1)
        r = [inv_q0] + [ZERO] * order
        for k in range(1, order + 1):
            acc = ZERO
            for j in range(1, k + 1):
                acc = acc + q[j] * r[k - j]
            r[k] = -(acc * inv_q0)
        return [2 * x for x in r]
    if which == "gbar":
        w = [ONE, (s[1] - 1) / 2] + [x / 2 for x in s[2 : order + 2]]
        u = [ZERO] * (order + 2)
        for k in range(1, order + 2):
            acc = w[k] * k
            for j in range(1, k):
                acc = acc - u[j] * w[k - j] * j
            u[k] = acc / k
        return u[1 : order + 2]
    raise InvalidArgumentError(f"unknown generating series {which!r}")


def psi_coefficients(n: int) -> tuple[BetaRational, BetaRational]:
    """Finite-``n`` weights of the same-batch and cross-batch Hessian-gradient products.

    ``psi_eq = -beta (1 - beta^n (1 + beta) + beta^(2n+1)) / ((1-beta)^2 (1+beta))``
    ``psi_ne = (-2 beta^2 + 2n (1 - beta^2) beta^(n+1) + 2 beta^(2n+2)) / ((1-beta)^3 (1+beta))``

    Both numerators vanish at ``beta = -1``, so each value is a polynomial
    over a power of ``1 - beta``.
    """
    _check_index(n, "n")
    eq_num = [Fraction(0)] * (2 * n + 3)
    eq_num[1] -= 1
    eq_num[n + 1] += 1
    eq_num[n + 2] += 1
    eq_num[2 * n + 2] -= 1
    ne_num = [Fraction(0)] * (2 * n + 3)
    ne_num[2] -= 2
    ne_num[n + 1] += 2 * n
    ne_num[n + 3] -= 2 * n
    ne_num[2 * n + 2] += 2
    psi_eq = BetaRational.from_poly_over(eq_num, {-1: 1}) * BetaRational((1,), 2)
    psi_ne = BetaRational.from_poly_over(ne_num, {-1: 1}) * BetaRational((1,), 3)
    return psi_eq, psi_ne

