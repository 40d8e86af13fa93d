"""Derivative oracles, mini-batch loss families and permutation averaging.

Every built-in loss has the ridge form

    L(theta) = 1/2 theta^T A theta - b^T theta + c + sum_r s_r phi_r(w_r^T theta)

so the order-k contraction is available in closed form:
``nabla^k L[u_1..u_{k-1}] = sum_r s_r phi_r^(k)(w_r^T theta) prod_i (w_r^T u_i) w_r``
plus the quadratic part for ``k <= 2``. Points and directions may carry
leading batch dimensions, which broadcast.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, InvalidArgumentError

UNBOUNDED_ORDER = 64


class Profile:
    """Scalar function of one variable with derivatives of every order."""

    def deriv(self, k: int, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def degree(self) -> int | None:
        """Polynomial degree, or ``None`` for non-polynomial profiles."""
        return None


@dataclass(frozen=True)
class PolyProfile(Profile):
    """Polynomial ``sum_j coeffs[j] s^j``."""

    coeffs: tuple[float, ...]

    def deriv(self, k: int, s):
        c = np.polynomial.polynomial.polyder(np.asarray(self.coeffs, dtype=float), k) if k else np.asarray(self.coeffs, dtype=float)
        return np.polynomial.polynomial.polyval(s, c) if c.size else np.zeros_like(np.asarray(s, dtype=float))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


@dataclass(frozen=True)
class CosProfile(Profile):
    """``amplitude * cos(frequency * s + phase)``."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def deriv(self, k: int, s):
        arg = self.frequency * np.asarray(s, dtype=float) + self.phase + k * math.pi / 2
        return self.amplitude * self.frequency**k * np.cos(arg)


@dataclass(frozen=True)
class Ridge:
    """One ridge term ``scale * profile(direction . theta)``."""

    direction: np.ndarray
    profile: Profile
    scale: float = 1.0


class DerivativeOracle:
    """Supplies contractions ``nabla^k L(theta)[u_1, ..., u_{k-1}]``.

    Attributes:
        dim: Parameter dimension ``d``.
        max_order: Highest supported derivative order.
    """

    dim: int
    max_order: int

    def value(self, theta) -> np.ndarray:
        raise NotImplementedError

    def contract(self, theta, k: int, dirs: Sequence[np.ndarray] = ()) -> np.ndarray:
        raise NotImplementedError

    def grad(self, theta) -> np.ndarray:
        return self.contract(theta, 1)

    def hvp(self, theta, u) -> np.ndarray:
        return self.contract(theta, 2, [u])

    def hessian(self, theta) -> np.ndarray:
        """Dense Hessian at a single point."""
        eye = np.eye(self.dim)
        return self.contract(np.asarray(theta, dtype=float), 2, [eye])

    def require_order(self, k: int) -> None:
        if k > self.max_order:
            raise CapabilityError(f"oracle supports derivatives up to order {self.max_order}, need {k}")


class RidgeLoss(DerivativeOracle):
    """Quadratic plus ridge-function loss with closed-form derivatives.

    Args:
        dim: Parameter dimension.
        A: Symmetric ``(d, d)`` matrix or ``None``.
        b: Linear coefficient or ``None``.
        const: Additive constant.
        ridges: Ridge terms.
        max_order: Override for the advertised derivative order.

    Raises:
        InvalidArgumentError: If ``A`` is not symmetric or shapes disagree.
    """

    def __init__(self, dim: int, A=None, b=None, const: float = 0.0,
                 ridges: Sequence[Ridge] = (), max_order: int | None = None):
        self.dim = int(dim)
        self.A = None if A is None else np.array(A, dtype=float)
        self.b = np.zeros(self.dim) if b is None else np.array(b, dtype=float)
        self.const = float(const)
        if self.A is not None:
            if self.A.shape != (self.dim, self.dim):
                raise InvalidArgumentError(f"A must have shape ({dim}, {dim})")
            if not np.allclose(self.A, self.A.T, rtol=0, atol=1e-14 * (1 + np.abs(self.A).max())):
                raise InvalidArgumentError("A must be symmetric")
            self.A = 0.5 * (self.A + self.A.T)
        if self.b.shape != (self.dim,):
            raise InvalidArgumentError(f"b must have shape ({dim},)")
        self.ridges = tuple(Ridge(np.array(r.direction, dtype=float), r.profile, float(r.scale)) for r in ridges)
        for r in self.ridges:
            if r.direction.shape != (self.dim,):
                raise InvalidArgumentError("ridge direction has wrong dimension")
        self.max_order = UNBOUNDED_ORDER if max_order is None else int(max_order)

    def value(self, theta):
        th = np.asarray(theta, dtype=float)
        out = self.const - th @ self.b
        if self.A is not None:
            out = out + 0.5 * np.einsum("...i,ij,...j->...", th, self.A, th)
        for r in self.ridges:
            out = out + r.scale * r.profile.deriv(0, th @ r.direction)
        return out

    def contract(self, theta, k: int, dirs: Sequence[np.ndarray] = ()) -> np.ndarray:
        """Order-``k`` derivative applied to ``k - 1`` directions.

        Args:
            theta: Point of shape ``(..., d)``.
            k: Derivative order, at least 1.
            dirs: ``k - 1`` arrays of shape ``(..., d)``.
        """
        if k < 1 or len(dirs) != k - 1:
            raise InvalidArgumentError(f"order {k} needs {k - 1} directions, got {len(dirs)}")
        self.require_order(k)
        th = np.asarray(theta, dtype=float)
        us = [np.asarray(u, dtype=float) for u in dirs]
        shape = np.broadcast_shapes(th.shape, *(u.shape for u in us))
        out = np.zeros(shape)
        if k == 1:
            out = out + (th @ self.A if self.A is not None else 0.0) - self.b
        elif k == 2 and self.A is not None:
            out = out + us[0] @ self.A
        for r in self.ridges:
            w = r.direction
            coef = r.scale * r.profile.deriv(k, th @ w)
            for u in us:
                coef = coef * (u @ w)
            out = out + np.asarray(coef)[..., None] * w
        return out

    def describe(self) -> dict:
        """JSON-compatible description used for configuration hashing."""
        return {
            "dim": self.dim,
            "A": None if self.A is None else self.A.tolist(),
            "b": self.b.tolist(),
            "const": self.const,
            "ridges": [{"direction": r.direction.tolist(), "profile": repr(r.profile), "scale": r.scale}
                       for r in self.ridges],
            "max_order": self.max_order,
        }

    @staticmethod
    def mean(losses: Sequence[RidgeLoss]) -> RidgeLoss:
        """Exact pointwise average of ridge losses as a single oracle."""
        if not losses:
            raise InvalidArgumentError("need at least one loss")
        d = losses[0].dim
        n = len(losses)
        A = None
        if any(l.A is not None for l in losses):
            A = sum((l.A if l.A is not None else np.zeros((d, d))) for l in losses) / n
        b = sum(l.b for l in losses) / n
        const = sum(l.const for l in losses) / n
        ridges = [Ridge(r.direction, r.profile, r.scale / n) for l in losses for r in l.ridges]
        return RidgeLoss(d, A, b, const, ridges, max_order=min(l.max_order for l in losses))


class DenseTensorOracle(DerivativeOracle):
    """Polynomial loss evaluated through dense derivative tensors.

    Only suitable for small ``d`` and low degree; used to cross-check the
    ridge contractions.

    Args:
        dim: Parameter dimension.
        monomials: Mapping from exponent tuples to coefficients.
    """

    def __init__(self, dim: int, monomials: dict[tuple[int, ...], float]):
        self.dim = dim
        self.monomials = {tuple(e): float(c) for e, c in monomials.items()}
        self.max_order = UNBOUNDED_ORDER

    def value(self, theta):
        th = np.asarray(theta, dtype=float)
        return sum(c * np.prod(th ** np.array(e)) for e, c in self.monomials.items())

    def tensor(self, theta, k: int) -> np.ndarray:
        """Full ``k``-th derivative tensor at a single point."""
        th = np.asarray(theta, dtype=float)
        out = np.zeros((self.dim,) * k)
        for idx in itertools.product(range(self.dim), repeat=k):
            cnt = Counter(idx)
            total = 0.0
            for e, c in self.monomials.items():
                term = c
                for i in range(self.dim):
                    p, q = e[i], cnt.get(i, 0)
                    if q > p:
                        term = 0.0
                        break
                    term *= math.perm(p, q) * th[i] ** (p - q)
                total += term
            out[idx] = total
        return out

    def contract(self, theta, k: int, dirs: Sequence[np.ndarray] = ()) -> np.ndarray:
        t = self.tensor(theta, k)
        for u in dirs:
            t = np.tensordot(t, np.asarray(u, dtype=float), axes=([t.ndim - 1], [0]))
        return t


def quadratic_loss(A, b=None, const: float = 0.0) -> RidgeLoss:
    """``1/2 theta^T A theta - b^T theta + const``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return RidgeLoss(A.shape[0], A, b, const)


def quartic_loss(c, A=None, b=None) -> RidgeLoss:
    """Separable quartic ``sum_i c_i theta_i^4`` plus an optional quadratic."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = c.size
    ridges = [Ridge(np.eye(d)[i], PolyProfile((0, 0, 0, 0, float(c[i])))) for i in range(d) if c[i] != 0]
    return RidgeLoss(d, A, b, 0.0, ridges)


def cubic_quartic_loss(A, b, directions, cubic, quartic) -> RidgeLoss:
    """``1/2 theta^T A theta - b^T theta + sum_r (c3_r s_r^3 + c4_r s_r^4)``, ``s_r = w_r . theta``."""
    W = np.atleast_2d(np.asarray(directions, dtype=float))
    ridges = [Ridge(W[r], PolyProfile((0, 0, 0, float(cubic[r]), float(quartic[r])))) for r in range(W.shape[0])]
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return RidgeLoss(A.shape[0], A, b, 0.0, ridges)


def sinusoid_loss(dim: int, amplitude: float = 1.0, frequency: float = 1.0, A=None, b=None) -> RidgeLoss:
    """``amplitude * sum_i cos(frequency theta_i)`` plus an optional quadratic."""
    ridges = [Ridge(np.eye(dim)[i], CosProfile(amplitude, frequency)) for i in range(dim)]
    return RidgeLoss(dim, A, b, 0.0, ridges)


def least_squares_samples(X, y) -> list[RidgeLoss]:
    """Per-sample losses ``1/2 (x_p . theta - y_p)^2``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("design matrix and targets disagree in length")
    return [RidgeLoss(X.shape[1], ridges=[Ridge(X[p], PolyProfile((0.5 * y[p] ** 2, -y[p], 0.5)))])
            for p in range(X.shape[0])]


def quadratic_samples(matrices, centers) -> list[RidgeLoss]:
    """Per-sample losses ``1/2 (theta - c_p)^T A_p (theta - c_p)``."""
    out = []
    for A, c in zip(matrices, centers):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.asarray(c, dtype=float)
        out.append(RidgeLoss(A.shape[0], A, A @ c, 0.5 * c @ A @ c))
    return out


def builtin_loss(name: str, params: dict) -> DerivativeOracle:
    """Construct a built-in full-batch loss from a parameter dictionary.

    Args:
        name: One of ``quadratic``, ``quartic``, ``cubic_quartic``,
            ``sinusoid`` or ``least_squares``.
        params: Keyword parameters of the matching constructor. Matrices and
            vectors are nested lists.

    Raises:
        InvalidArgumentError: For unknown names, missing keys or a
            non-symmetric ``A``.
    """
    p = dict(params)
    try:
        if name == "quadratic":
            return quadratic_loss(p["A"], p.get("b"), p.get("const", 0.0))
        if name == "quartic":
            return quartic_loss(p["c"], p.get("A"), p.get("b"))
        if name == "cubic_quartic":
            return cubic_quartic_loss(p["A"], p.get("b"), p["directions"], p["cubic"], p["quartic"])
        if name == "sinusoid":
            return sinusoid_loss(int(p.get("dimension", 1)), p.get("amplitude", 1.0), p.get("frequency", 1.0),
                                 p.get("A"), p.get("b"))
        if name == "least_squares":
            return RidgeLoss.mean(least_squares_samples(p["design_matrix"], p["targets"]))
    except KeyError as exc:
        raise InvalidArgumentError(f"loss {name!r} is missing parameter {exc.args[0]!r}") from None
    raise InvalidArgumentError(f"unknown loss {name!r}")


def sample_losses(config: dict) -> list[RidgeLoss]:
    """Per-sample losses from a mini-batch config.

    Accepts ``least_squares`` (``design_matrix``, ``targets``) or
    ``quadratic_samples`` (``matrices``, ``centers``).
    """
    name = config.get("name")
    try:
        if name == "least_squares":
            return least_squares_samples(config["design_matrix"], config["targets"])
        if name == "quadratic_samples":
            return quadratic_samples(config["matrices"], config["centers"])
    except KeyError as exc:
        raise InvalidArgumentError(f"sample family {name!r} is missing {exc.args[0]!r}") from None
    raise InvalidArgumentError(f"unknown sample family {name!r}")


@dataclass
class MiniBatchFamily:
    """Per-sample losses with a batching permutation.

    Batch ``k`` of epoch ``e`` averages the samples at positions
    ``kB .. kB + B - 1`` of that epoch's permutation. With
    ``reshuffle=False`` the same permutation is reused for every epoch.

    Attributes:
        samples: Per-sample oracles.
        batch_size: Samples per batch ``B``.
        permutation: Permutation of ``range(P)`` used for epoch 0.
        seed: Seed for the permutations of later epochs.
        reshuffle: Draw a new permutation for every epoch when true.
    """

    samples: list[RidgeLoss]
    batch_size: int
    permutation: tuple[int, ...] | None = None
    seed: int = 0
    reshuffle: bool = False
    _cache: dict = field(default_factory=dict, repr=False)
    _perms: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        P = len(self.samples)
        if P == 0 or self.batch_size < 1 or P % self.batch_size:
            raise InvalidArgumentError(f"{P} samples cannot be split into batches of {self.batch_size}")
        if self.permutation is None:
            self.permutation = tuple(int(i) for i in np.random.default_rng(self.seed).permutation(P))
        if sorted(self.permutation) != list(range(P)):
            raise InvalidArgumentError("permutation must be a permutation of range(P)")
        self.permutation = tuple(self.permutation)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_batches(self) -> int:
        return len(self.samples) // self.batch_size

    @property
    def dim(self) -> int:
        return self.samples[0].dim

    def epoch_permutation(self, epoch: int) -> tuple[int, ...]:
        if epoch == 0 or not self.reshuffle:
            return self.permutation
        if epoch not in self._perms:
            rng = np.random.default_rng([self.seed, epoch])
            self._perms[epoch] = tuple(int(i) for i in rng.permutation(self.n_samples))
        return self._perms[epoch]

    def batch(self, k: int, permutation: Sequence[int] | None = None) -> RidgeLoss:
        """Batch loss ``L^(k)`` for a global step index ``k``."""
        if permutation is not None:
            idx = tuple(sorted(permutation[k * self.batch_size:(k + 1) * self.batch_size]))
        else:
            epoch, j = divmod(k, self.n_batches)
            perm = self.epoch_permutation(epoch)
            idx = tuple(sorted(perm[j * self.batch_size:(j + 1) * self.batch_size]))
        if idx not in self._cache:
            self._cache[idx] = RidgeLoss.mean([self.samples[i] for i in idx])
        return self._cache[idx]

    def full(self) -> RidgeLoss:
        key = tuple(range(self.n_samples))
        if key not in self._cache:
            self._cache[key] = RidgeLoss.mean(self.samples)
        return self._cache[key]

    def schedule(self) -> Callable[[int], RidgeLoss]:
        """Loss sequence ``s -> L^(s)`` for trajectory engines."""
        return self.batch


def constant_schedule(oracle: DerivativeOracle) -> Callable[[int], DerivativeOracle]:
    """Full-batch loss sequence."""
    return lambda s: oracle


def empirical_covariance(family: MiniBatchFamily, theta) -> np.ndarray:
    """Per-sample gradient covariance with ``1/P`` normalization."""
    th = np.asarray(theta, dtype=float)
    G = np.stack([s.grad(th) for s in family.samples])
    D = G - G.mean(axis=0)
    return D.T @ D / G.shape[0]


def grad_trace_covariance(family: MiniBatchFamily, theta) -> np.ndarray:
    """Gradient of ``tr Sigma``: ``(2/P) sum_p nabla^2 l_p [nabla l_p - nabla L]``."""
    th = np.asarray(theta, dtype=float)
    g = family.full().grad(th)
    out = np.zeros_like(th)
    for s in family.samples:
        out += s.hvp(th, s.grad(th) - g)
    return 2.0 * out / family.n_samples


PERMUTATION_MAX = 8


@dataclass(frozen=True)
class PermutationAverage:
    """Exhaustive permutation mean of ``f_2`` and its closed-form prediction.

    Attributes:
        mean: Average of ``f_2^(n)(theta)`` over all permutations.
        prediction: ``psi_eq E[H0 g0] + psi_ne E[H0 g1]`` from the closed forms.
        same_batch_mean: Exhaustive average of ``nabla^2 L^(0) nabla L^(0)``.
        same_batch_prediction: ``H g + (C - 1)/(2(CB - 1)) grad tr Sigma``.
        cross_batch_mean: Exhaustive average of ``nabla^2 L^(0) nabla L^(1)``.
        cross_batch_prediction: ``H g - grad tr Sigma / (2(CB - 1))``.
        psi: Numeric ``(psi_eq, psi_ne)``.
        n_permutations: Number of permutations averaged.
    """

    mean: np.ndarray
    prediction: np.ndarray
    same_batch_mean: np.ndarray
    same_batch_prediction: np.ndarray
    cross_batch_mean: np.ndarray | None
    cross_batch_prediction: np.ndarray | None
    psi: tuple[float, float]
    n_permutations: int


def permutation_average_f2(family: MiniBatchFamily, theta, n: int, beta: float) -> PermutationAverage:
    """Average ``f_2^(n)`` over every ordering of the samples.

    Requires ``P = (n + 1) B``. Orderings that give the same sequence of batch
    sets yield the same value, so each distinct ordered partition is evaluated
    once and weighted by its multiplicity ``(B!)^C``.

    Raises:
        CapabilityError: If ``P`` exceeds ``PERMUTATION_MAX``.
        InvalidArgumentError: If ``P != (n + 1) B``.
    """
    from .coefficients import CoefficientContext, f_treesum
    from .polynomials import psi_coefficients

    P, B = family.n_samples, family.batch_size
    C = n + 1
    if P > PERMUTATION_MAX:
        raise CapabilityError(f"exhaustive averaging supports at most {PERMUTATION_MAX} samples")
    if P != C * B:
        raise InvalidArgumentError(f"need P = (n + 1) B, got P={P}, n={n}, B={B}")
    th = np.asarray(theta, dtype=float)
    partitions: Counter = Counter()
    for perm in itertools.permutations(range(P)):
        partitions[tuple(tuple(sorted(perm[k * B:(k + 1) * B])) for k in range(C))] += 1
    total = sum(partitions.values())
    mean = np.zeros_like(th)
    same = np.zeros_like(th)
    cross = np.zeros_like(th)
    cache: dict = {}

    def batch_loss(idx):
        if idx not in cache:
            cache[idx] = RidgeLoss.mean([family.samples[i] for i in idx])
        return cache[idx]

    for part, mult in partitions.items():
        losses = [batch_loss(idx) for idx in part]
        ctx = CoefficientContext(beta, n, lambda s, losses=losses: losses[s], th)
        mean += mult * f_treesum(ctx, 2)
        l0 = losses[0]
        same += mult * l0.hvp(th, l0.grad(th))
        if C > 1:
            cross += mult * l0.hvp(th, losses[1].grad(th))
    mean /= total
    same /= total
    cross /= total
    full = family.full()
    hg = full.hvp(th, full.grad(th))
    gtr = grad_trace_covariance(family, th)
    same_pred = hg + (C - 1) / (2 * (C * B - 1)) * gtr if C * B > 1 else hg
    cross_pred = hg - gtr / (2 * (C * B - 1)) if C > 1 else None
    if n >= 1:
        pe, pn = (float(p(beta)) for p in psi_coefficients(n))
    else:
        pe, pn = 0.0, 0.0
    prediction = pe * same_pred + (pn * cross_pred if cross_pred is not None else 0.0)
    return PermutationAverage(mean, prediction, same, same_pred,
                              cross if C > 1 else None, cross_pred, (pe, pn), total)


def quartic_benchmark() -> tuple[RidgeLoss, np.ndarray]:
    """Full-batch two-dimensional quartic test problem and its start point."""
    loss = quartic_loss([0.1, 0.05], A=[[0.5, 0.1], [0.1, 0.4]], b=[0.2, -0.1])
    return loss, np.array([0.8, -0.6])


def minibatch_benchmark(seed: int = 0, n_samples: int = 8, batch_size: int = 2,
                        dim: int = 2) -> tuple[MiniBatchFamily, np.ndarray]:
    """Quadratic per-sample losses with a fixed seeded batching permutation."""
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(n_samples):
        M = rng.normal(size=(dim, dim))
        mats.append(0.5 * M @ M.T + 0.5 * np.eye(dim))
    centers = rng.normal(size=(n_samples, dim))
    family = MiniBatchFamily(quadratic_samples(mats, centers), batch_size, seed=seed)
    return family, np.ones(dim)
