"""Trajectory engines, error metrics and the invariant-manifold solver.

Engines share :class:`RunConfig` and return :class:`Trajectory` objects
sampled at ``t_n = n h`` for ``n = 0..floor(T/h)``:

* :func:`hb_run` is the heavy-ball recursion itself.
* :func:`memoryless_run` iterates ``theta + sum_{j<=p} h^j f_j^(n)(theta)``.
* :func:`modified_ode_run` integrates the piecewise modified equation.
* :func:`principal_iteration_run` and :func:`principal_flow_quadratic` keep
  only the first and second derivative terms.

The velocity convention is ``theta' = theta - h grad + h beta v`` and
``v' = beta v - grad``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .bseries import TreeSeries, at_beta, bea_series, elementary_differentials, limiting_bea_series
from .coefficients import CoefficientContext, f_treesum, fd_directional, memoryless_tree_weights
from .errors import CapabilityError, DivergenceError, InvalidArgumentError, SolverError
from .losses import DerivativeOracle, MiniBatchFamily, RidgeLoss
from .polynomials import generating_series

DIVERGENCE_THRESHOLD = 1e8
FD_ROUTE_MAX_ORDER = 3
TREE_ROUTE_MAX_ORDER = 6


@dataclass(kw_only=True)
class RunConfig:
    """Shared configuration of all trajectory engines.

    Attributes:
        beta: Momentum parameter in ``[0, 1)``.
        h: Step size.
        horizon: Time horizon ``T``; the run has ``floor(T/h)`` steps.
        theta0: Initial point.
        order: Approximation order ``p``.
        v0: Initial velocity, zero when omitted.
        loss: Full-batch oracle.
        family: Mini-batch family; mutually exclusive with ``loss``.
        substeps: RK4 substeps per interval for ODE engines.
    """

    beta: float
    h: float
    horizon: float
    theta0: np.ndarray
    order: int = 2
    v0: np.ndarray | None = None
    loss: DerivativeOracle | None = None
    family: MiniBatchFamily | None = None
    substeps: int = 16

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise InvalidArgumentError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.h > 0:
            raise InvalidArgumentError(f"step size must be positive, got {self.h}")
        if self.order < 1:
            raise InvalidArgumentError(f"order must be positive, got {self.order}")
        if self.substeps < 1:
            raise InvalidArgumentError("substeps must be positive")
        if self.loss is not None and self.family is not None:
            raise InvalidArgumentError("give either a loss or a mini-batch family, not both")
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        self.v0 = np.zeros_like(self.theta0) if self.v0 is None else np.atleast_1d(np.asarray(self.v0, dtype=float))
        if self.v0.shape != self.theta0.shape:
            raise InvalidArgumentError("v0 and theta0 must have the same shape")
        if self.n_steps < 1:
            raise InvalidArgumentError(f"horizon {self.horizon} is shorter than one step of size {self.h}")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.horizon / self.h + 1e-9))

    @property
    def is_minibatch(self) -> bool:
        return self.family is not None

    @property
    def losses(self) -> Callable[[int], DerivativeOracle]:
        """Loss sequence ``s -> L^(s)``."""
        if self.family is not None:
            return self.family.schedule()
        if self.loss is None:
            raise InvalidArgumentError("configuration has no loss")
        loss = self.loss
        return lambda s: loss

    @property
    def full_loss(self) -> DerivativeOracle:
        if self.family is not None:
            return self.family.full()
        if self.loss is None:
            raise InvalidArgumentError("configuration has no loss")
        return self.loss

    def max_oracle_order(self) -> int:
        if self.family is not None:
            return min(s.max_order for s in self.family.samples)
        return self.full_loss.max_order

    def describe(self) -> dict:
        """JSON-compatible description of everything that determines a run."""
        out = {
            "beta": self.beta, "h": self.h, "horizon": self.horizon, "order": self.order,
            "theta0": self.theta0.tolist(), "v0": self.v0.tolist(), "substeps": self.substeps,
        }
        if self.family is not None:
            out["family"] = {
                "samples": [_describe_oracle(s) for s in self.family.samples],
                "batch_size": self.family.batch_size, "permutation": list(self.family.permutation),
                "seed": self.family.seed, "reshuffle": self.family.reshuffle,
            }
        elif self.loss is not None:
            out["loss"] = _describe_oracle(self.loss)
        return out

    def config_hash(self, engine: str = "") -> str:
        payload = json.dumps({"engine": engine, **self.describe()}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _describe_oracle(oracle: DerivativeOracle):
    if hasattr(oracle, "describe"):
        return oracle.describe()
    return repr(oracle)


@dataclass
class Trajectory:
    """Iterates of one engine on the grid ``t_n = n h``.

    Attributes:
        engine: Engine name.
        h: Step size.
        thetas: ``(N + 1, d)`` array of real iterates.
        config_hash: Hash of the generating configuration.
        complex_values: Full complex iterates for complex-valued flows.
        meta: Engine-specific metadata.
    """

    engine: str
    h: float
    thetas: np.ndarray
    config_hash: str
    complex_values: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.thetas.shape[0])

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.h

    def __len__(self) -> int:
        return self.thetas.shape[0]

    def rows(self) -> list[tuple[int, float, np.ndarray]]:
        """``(n, t_n, theta_n)`` triples."""
        return [(int(n), float(n * self.h), self.thetas[n]) for n in range(len(self))]


def _check_finite(theta: np.ndarray, n: int) -> None:
    if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_THRESHOLD:
        raise DivergenceError(f"iterate {n} left the finite region", n - 1)


def _trajectory(engine: str, cfg: RunConfig, thetas: list[np.ndarray], **meta) -> Trajectory:
    return Trajectory(engine, cfg.h, np.array(thetas), cfg.config_hash(engine), meta=meta)


def _require_zero_velocity(cfg: RunConfig, engine: str) -> None:
    if np.any(cfg.v0 != 0):
        raise InvalidArgumentError(f"{engine} assumes a zero initial velocity")


def hb_run(cfg: RunConfig) -> Trajectory:
    """Heavy-ball iterates.

    Mini-batch runs require ``v0 = 0``; the velocity recursion then equals the
    gradient-history sum ``theta - h sum_k beta^k grad L^(n-k)(theta^(n-k))``.

    Raises:
        DivergenceError: If an iterate is non-finite or exceeds the threshold.
    """
    if cfg.is_minibatch:
        _require_zero_velocity(cfg, "mini-batch heavy ball")
    losses = cfg.losses
    theta, v = cfg.theta0.copy(), cfg.v0.copy()
    out = [theta.copy()]
    for n in range(cfg.n_steps):
        g = losses(n).grad(theta)
        theta = theta - cfg.h * g + cfg.h * cfg.beta * v
        v = cfg.beta * v - g
        _check_finite(theta, n + 1)
        out.append(theta.copy())
    return _trajectory("hb", cfg, out)


def memoryless_increment(cfg: RunConfig, n: int, theta: np.ndarray, order: int | None = None) -> np.ndarray:
    """``sum_{j<=p} h^j f_j^(n)(theta)``."""
    p = cfg.order if order is None else order
    ctx = CoefficientContext(cfg.beta, n, cfg.losses, theta)
    return sum(cfg.h**j * f_treesum(ctx, j) for j in range(1, p + 1))


def memoryless_run(cfg: RunConfig, certify: bool = False) -> Trajectory:
    """Memoryless iterates ``theta + sum_{j<=p} h^j f_j^(n)(theta)``.

    Args:
        cfg: Run configuration with ``v0 = 0``.
        certify: Require oracle order ``2p`` instead of ``p``.

    Raises:
        CapabilityError: If the oracle order is too low.
        DivergenceError: As for :func:`hb_run`.
    """
    _require_zero_velocity(cfg, "the memoryless iteration")
    need = 2 * cfg.order if certify else cfg.order
    if cfg.max_oracle_order() < need:
        raise CapabilityError(f"oracle order {cfg.max_oracle_order()} is below the required {need}")
    theta = cfg.theta0.copy()
    out = [theta.copy()]
    for n in range(cfg.n_steps):
        theta = theta + memoryless_increment(cfg, n, theta)
        _check_finite(theta, n + 1)
        out.append(theta.copy())
    return _trajectory("memoryless", cfg, out, order=cfg.order)


def global_error(a: Trajectory, b: Trajectory) -> float:
    """``max_n ||a_n - b_n||`` over the shared grid.

    Raises:
        InvalidArgumentError: If step sizes or lengths differ.
    """
    if a.thetas.shape != b.thetas.shape or not math.isclose(a.h, b.h, rel_tol=1e-12):
        raise InvalidArgumentError("trajectories live on different grids")
    return float(np.max(np.linalg.norm(np.real(a.thetas) - np.real(b.thetas), axis=1)))


def order_estimate(errors: list[tuple[float, float]]) -> float:
    """Least-squares slope of ``log e`` against ``log h``.

    Raises:
        InvalidArgumentError: With fewer than three points or non-positive values.
    """
    if len(errors) < 3:
        raise InvalidArgumentError("order estimation needs at least three step sizes")
    hs = np.array([e[0] for e in errors], dtype=float)
    es = np.array([e[1] for e in errors], dtype=float)
    if np.any(hs <= 0) or np.any(es <= 0):
        raise InvalidArgumentError("step sizes and errors must be positive")
    return float(np.polyfit(np.log(hs), np.log(es), 1)[0])


def _rk4(field_fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, span: float, substeps: int) -> np.ndarray:
    dt = span / substeps
    y = theta
    for _ in range(substeps):
        k1 = field_fn(y)
        k2 = field_fn(y + 0.5 * dt * k1)
        k3 = field_fn(y + 0.5 * dt * k2)
        k4 = field_fn(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _series_field(coeffs: dict, h: float, oracle: DerivativeOracle) -> Callable[[np.ndarray], np.ndarray]:
    # Field sum_t c_t h^{|t|-1} F(t) for numeric tree coefficients.
    trees = list(coeffs)
    weights = [c * h ** (t.vertex_count - 1) for t, c in coeffs.items()]

    def fn(theta):
        F = elementary_differentials(trees, theta, oracle)
        return sum(w * F[t] for t, w in zip(trees, weights))

    return fn


def tree_bea_coefficients(beta: float, n: int, order: int) -> dict[int, TreeSeries]:
    """Numeric finite-``n`` modified-field coefficients ``fbar_j^(n)`` for a single loss."""
    weights = memoryless_tree_weights(beta, n, order)
    parts: dict[int, dict] = {}
    for t, w in weights.items():
        parts.setdefault(t.vertex_count, {})[t] = w
    return bea_series({m: TreeSeries(c, order) for m, c in parts.items()}, order)


class _FiniteBEAField:
    """Modified field at step ``n`` from finite differences (``p <= 3``).

    ``f_1`` and its derivatives are exact oracle sums; only ``f_2`` is
    differentiated numerically.
    """

    def __init__(self, cfg: RunConfig, n: int):
        self.cfg = cfg
        self.n = n
        groups: dict[int, list] = {}
        for k in range(n + 1):
            oracle = cfg.losses(n - k)
            groups.setdefault(id(oracle), [oracle, 0.0])[1] += cfg.beta**k
        self.weighted = list(groups.values())

    def _df1(self, theta, dirs) -> np.ndarray:
        return -sum(w * o.contract(theta, len(dirs) + 1, list(dirs)) for o, w in self.weighted)

    def _f(self, j: int, theta) -> np.ndarray:
        return f_treesum(CoefficientContext(self.cfg.beta, self.n, self.cfg.losses, theta), j)

    def _fbar2(self, theta) -> np.ndarray:
        f1 = self._df1(theta, [])
        return self._f(2, theta) - 0.5 * self._df1(theta, [f1])

    def __call__(self, theta) -> np.ndarray:
        p, h = self.cfg.order, self.cfg.h
        f1 = self._df1(theta, [])
        out = f1
        if p >= 2:
            fb2 = self._fbar2(theta)
            out = out + h * fb2
        if p >= 3:
            d_fb2 = fd_directional(self._fbar2, theta, [f1])
            lie = self._df1(theta, [f1, f1]) + self._df1(theta, [self._df1(theta, [f1])])
            fb3 = self._f(3, theta) - 0.5 * (self._df1(theta, [fb2]) + d_fb2) - lie / 6
            out = out + h**2 * fb3
        return out


def modified_ode_run(cfg: RunConfig, route: str = "auto") -> Trajectory:
    """Piecewise modified equation integrated with RK4 substeps.

    On ``[t_n, t_{n+1}]`` the field is ``sum_{i<p} h^i fbar_{i+1}^(n)``.

    Args:
        cfg: Run configuration.
        route: ``"tree"`` (exact finite-``n`` tree coefficients, full batch),
            ``"fd"`` (finite differences, any schedule, ``p <= 3``),
            ``"limit"`` (``n -> inf`` coefficients, full batch) or ``"auto"``
            (``tree`` for full batch, ``fd`` for mini-batch).

    Raises:
        CapabilityError: If the route cannot reach order ``p``.
        DivergenceError: As for :func:`hb_run`.
    """
    if route == "auto":
        route = "fd" if cfg.is_minibatch else "tree"
    p = cfg.order
    if route == "fd":
        if p > FD_ROUTE_MAX_ORDER:
            raise CapabilityError(f"finite-difference route supports p <= {FD_ROUTE_MAX_ORDER}")
        _require_zero_velocity(cfg, "the finite-n modified equation")
    elif route in ("tree", "limit"):
        if cfg.is_minibatch:
            raise CapabilityError(f"route {route!r} needs a full-batch loss")
        if p > TREE_ROUTE_MAX_ORDER:
            raise CapabilityError(f"tree route supports p <= {TREE_ROUTE_MAX_ORDER}")
        if route == "tree":
            _require_zero_velocity(cfg, "the finite-n modified equation")
    else:
        raise InvalidArgumentError(f"unknown route {route!r}")
    if cfg.max_oracle_order() < p:
        raise CapabilityError(f"oracle order {cfg.max_oracle_order()} is below p = {p}")

    limit_field = None
    if route == "limit":
        limit_field = _series_field(at_beta(limiting_bea_series(p), cfg.beta).coeffs, cfg.h, cfg.loss)
    theta = cfg.theta0.copy()
    out = [theta.copy()]
    for n in range(cfg.n_steps):
        if route == "limit":
            fn = limit_field
        elif route == "tree":
            fbar = tree_bea_coefficients(cfg.beta, n, p)
            coeffs: dict = {}
            for s in fbar.values():
                for t, c in s.coeffs.items():
                    coeffs[t] = coeffs.get(t, 0.0) + c
            fn = _series_field(coeffs, cfg.h, cfg.loss)
        else:
            fn = _FiniteBEAField(cfg, n)
        theta = _rk4(fn, theta, cfg.h, cfg.substeps)
        _check_finite(theta, n + 1)
        out.append(theta.copy())
    return _trajectory("modified_ode", cfg, out, route=route, order=p)


def convergence_radius(beta: float) -> float:
    """``R_beta = (1 - sqrt(beta))^2``."""
    return (1 - math.sqrt(beta)) ** 2


def sigma_beta(z, beta: float):
    """Principal spectral filter ``2 / (1 - beta + z + sqrt((1 - beta - z)^2 - 4 beta z))``.

    Complex inputs, or real inputs with a negative discriminant, use the
    principal square root.
    """
    z = np.asarray(z)
    disc = (1 - beta - z) ** 2 - 4 * beta * z
    if np.iscomplexobj(disc) or np.any(disc < 0):
        root = np.sqrt(disc.astype(complex))
    else:
        root = np.sqrt(disc)
    return 2 / (1 - beta + z + root)


def sigma_series(beta: float, terms: int) -> np.ndarray:
    """Numeric power-series coefficients ``sigma_k`` of the filter, ``k < terms``."""
    return np.array([float(c(beta)) for c in generating_series("sigma", terms - 1)])


def hb_eigenvalues(beta: float, z) -> tuple[np.ndarray, np.ndarray]:
    """``lambda_+-(z) = (1 + beta - z +- sqrt((1 - beta - z)^2 - 4 beta z)) / 2`` with the principal root."""
    z = np.asarray(z, dtype=complex)
    root = np.sqrt((1 - beta - z) ** 2 - 4 * beta * z)
    return (1 + beta - z + root) / 2, (1 + beta - z - root) / 2


def hb_quadratic_closed_form(beta: float, h: float, theta0: float, v0: float, n_steps: int,
                             curvature: float = 1.0) -> np.ndarray:
    """Heavy-ball iterates on ``L = curvature theta^2 / 2`` from the two-eigenvalue formula.

    Returns:
        Complex array of length ``n_steps + 1``; the imaginary part is rounding.

    Raises:
        InvalidArgumentError: At the double root, where the formula degenerates.
    """
    z = h * curvature
    lp, lm = hb_eigenvalues(beta, z)
    if abs(lp - lm) < 1e-14:
        raise InvalidArgumentError("double eigenvalue; the two-term formula does not apply")
    n = np.arange(n_steps + 1)
    hz = h * beta * v0
    return (((1 - z - lm) * theta0 + hz) * lp**n - ((1 - z - lp) * theta0 + hz) * lm**n) / (lp - lm)


def manifold_velocity(beta: float, h: float, theta0, curvature: float = 1.0):
    """Initial velocity that places a quadratic run on the ``lambda_+`` eigendirection."""
    lp, _ = hb_eigenvalues(beta, h * curvature)
    v0 = np.asarray(theta0) * (lp + h * curvature - 1) / (h * beta)
    return v0.real if abs(lp.imag) == 0 else v0


def _check_radius(z_max: float, beta: float) -> None:
    R = convergence_radius(beta)
    if z_max >= R:
        raise CapabilityError(f"h * ||Hessian|| = {z_max:.6g} is outside the filter radius R_beta = {R:.6g}")


def principal_iteration_run(cfg: RunConfig, mode: str = "matrix", series_terms: int = 16) -> Trajectory:
    """Iterates ``theta - h sigma_beta(h nabla^2 L) nabla L`` (full batch).

    Args:
        cfg: Run configuration.
        mode: ``"matrix"`` applies the closed form through an
            eigendecomposition; ``"series"`` uses the truncated power series.
        series_terms: Number of series terms in series mode.

    Raises:
        CapabilityError: If ``h ||nabla^2 L||`` reaches ``R_beta``.
    """
    if mode not in ("matrix", "series"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    losses = cfg.losses
    coeffs = sigma_series(cfg.beta, series_terms) if mode == "series" else None
    theta = cfg.theta0.copy()
    out = [theta.copy()]
    for n in range(cfg.n_steps):
        oracle = losses(n)
        H = oracle.hessian(theta)
        evals, Q = np.linalg.eigh(0.5 * (H + H.T))
        z = cfg.h * evals
        _check_radius(float(np.max(np.abs(z))), cfg.beta)
        gains = sigma_beta(z, cfg.beta) if coeffs is None else np.polynomial.polynomial.polyval(z, coeffs)
        g = oracle.grad(theta)
        theta = theta - cfg.h * Q @ (gains * (Q.T @ g))
        _check_finite(theta, n + 1)
        out.append(theta.copy())
    return _trajectory("principal_iteration", cfg, out, mode=mode)


def principal_flow_quadratic(cfg: RunConfig, A, b=None) -> Trajectory:
    """Principal flow of ``1/2 theta^T A theta - b^T theta`` sampled at ``t_n``.

    Each eigenmode ``y_i`` of ``A`` evolves as
    ``y_i(t) = y_i(0) exp((t / h) Log lambda_+(h a_i))`` with principal
    branches of the square root and logarithm, so the flow is complex when
    ``lambda_+`` is complex or negative.

    Returns:
        Trajectory with real parts in ``thetas`` and full values in
        ``complex_values``; ``meta`` records eigenvalues and branches.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (cfg.theta0.size, cfg.theta0.size) or not np.allclose(A, A.T):
        raise InvalidArgumentError("A must be a symmetric matrix matching theta0")
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    evals, Q = np.linalg.eigh(A)
    theta_star = np.linalg.solve(A, b) if np.any(b) else np.zeros_like(b)
    lp, _ = hb_eigenvalues(cfg.beta, cfg.h * evals)
    if np.any(lp == 0):
        raise InvalidArgumentError("lambda_+ vanishes; the logarithm is undefined")
    rates = np.log(lp) / cfg.h
    y0 = Q.T @ (cfg.theta0 - theta_star)
    t = np.arange(cfg.n_steps + 1)[:, None] * cfg.h
    values = theta_star + (np.exp(t * rates) * y0) @ Q.T.astype(complex)
    traj = Trajectory("principal_flow", cfg.h, values.real.copy(), cfg.config_hash("principal_flow"),
                      complex_values=values,
                      meta={"eigenvalues": evals.tolist(), "lambda_plus": [complex(x) for x in lp],
                            "branch": "principal sqrt and log",
                            "complex": bool(np.any(np.abs(np.imag(lp)) > 0) or np.any(lp.real < 0))})
    return traj


@dataclass
class SpectrumReport:
    """Filtered least-squares operator.

    Attributes:
        eigenvalues: Eigenvalues of ``X^T X / N``.
        gains: ``sigma_beta(h * eigenvalue)``.
        radius: ``R_beta``.
        theta_star: Normal-equations solution.
        memoryless_gap: Largest difference between the order-``p`` memoryless
            increment at a late step and the order-matched filtered step.
    """

    eigenvalues: np.ndarray
    gains: np.ndarray
    radius: float
    theta_star: np.ndarray
    memoryless_gap: float


def least_squares_modified(X, y, cfg: RunConfig, check_step: int = 200) -> tuple[SpectrumReport, Trajectory]:
    """Gradient descent on the filtered loss ``L~`` with gradient ``sigma_beta(h X^T X / N) grad L``.

    The filter gain of every Hessian eigenvalue is reported. As a consistency
    check the order-``p`` memoryless increment at step ``check_step`` is
    compared with ``-h sum_{k<p} sigma_k (h H)^k grad L`` at ``theta0``.

    Raises:
        CapabilityError: If ``h ||X^T X / N||`` reaches ``R_beta``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    N = X.shape[0]
    H = X.T @ X / N
    evals, Q = np.linalg.eigh(H)
    _check_radius(float(np.max(np.abs(cfg.h * evals))), cfg.beta)
    gains = sigma_beta(cfg.h * evals, cfg.beta)
    theta_star = np.linalg.lstsq(X, y, rcond=None)[0]
    loss = RidgeLoss(X.shape[1], H, X.T @ y / N, 0.5 * float(y @ y) / N)

    coeffs = sigma_series(cfg.beta, cfg.order)
    g0 = loss.grad(cfg.theta0)
    filtered = -cfg.h * Q @ (np.polynomial.polynomial.polyval(cfg.h * evals, coeffs) * (Q.T @ g0))
    check_cfg = RunConfig(beta=cfg.beta, h=cfg.h, horizon=cfg.h, theta0=cfg.theta0, order=cfg.order, loss=loss)
    gap = float(np.max(np.abs(memoryless_increment(check_cfg, check_step, cfg.theta0) - filtered)))

    theta = cfg.theta0.copy()
    out = [theta.copy()]
    for n in range(cfg.n_steps):
        theta = theta - cfg.h * Q @ (gains * (Q.T @ loss.grad(theta)))
        _check_finite(theta, n + 1)
        out.append(theta.copy())
    report = SpectrumReport(evals, gains, convergence_radius(cfg.beta), theta_star, gap)
    traj = Trajectory("filtered_gd", cfg.h, np.array(out), _hash_payload({"X": X.tolist(), "y": y.tolist(),
                                                                         **cfg.describe()}))
    return report, traj


def _hash_payload(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def linear_manifold_slope(beta: float, h: float) -> float:
    """Slope ``kappa`` of the manifold ``g_h(theta) = kappa theta`` for ``L = theta^2 / 2``.

    ``kappa = -4 / ((1 - beta) ((1 - beta + sqrt(D))^2 - h^2))`` with
    ``D = (1 - beta - h)^2 - 4 beta h``.
    """
    disc = (1 - beta - h) ** 2 - 4 * beta * h
    if disc < 0:
        raise InvalidArgumentError("h is beyond the real-eigenvalue regime")
    return -4 / ((1 - beta) * ((1 - beta + math.sqrt(disc)) ** 2 - h**2))


def manifold_residual(loss: DerivativeOracle, beta: float, h: float, g: Callable, theta) -> np.ndarray:
    """Pointwise residual of the invariance equation for a scalar manifold function ``g``.

    ``-L'(zeta)/(1-beta) + h g(zeta) + L'(theta)/(1-beta) - h beta g(theta)`` with
    ``zeta = theta - h L'(theta)/(1-beta) + h^2 beta g(theta)``.
    """
    th = np.asarray(theta, dtype=float)
    c = 1 / (1 - beta)
    d1 = _scalar_deriv(loss, th, 1)
    zeta = th - h * c * d1 + h**2 * beta * g(th)
    return -c * _scalar_deriv(loss, zeta, 1) + h * g(zeta) + c * d1 - h * beta * g(th)


def _scalar_deriv(loss: DerivativeOracle, s: np.ndarray, k: int) -> np.ndarray:
    # k-th derivative of a one-dimensional loss at every entry of s.
    pts = np.asarray(s, dtype=float)[..., None]
    ones = np.ones_like(pts)
    return loss.contract(pts, k, [ones] * (k - 1))[..., 0]


@dataclass
class AttractivityReport:
    """Distance of an off-manifold heavy-ball run from the computed manifold.

    Attributes:
        residuals: ``r_n = |v_n + L'(theta_n)/(1-beta) - h g(theta_n)|``.
        base: Geometric base ``beta + margin``.
        ratios: ``r_n / (base^n r_0)``; the bound holds where this is ``<= 1``.
        holds: Whether every ratio is at most one.
        first_violation: First ``n`` with ratio above one, or ``None``.
        thetas: The heavy-ball iterates.
    """

    residuals: np.ndarray
    base: float
    ratios: np.ndarray
    holds: bool
    first_violation: int | None
    thetas: np.ndarray


@dataclass
class ManifoldResult:
    """Discretized invariant manifold ``g_h`` and diagnostics.

    Attributes:
        grid: Uniform grid on ``[center - R, center + R]``.
        values: ``g_h`` on the grid.
        iterations: Picard iterations performed.
        converged: Whether the update fell below the tolerance.
        updates: Sup-norm update of every iteration.
        clamp_events: Grid solves whose preimage left the grid in the last
            iteration; ``g`` is continued linearly there.
        residual: Sup of the invariance residual on the verification grid.
        verification_grid: Inner 80% of the domain, twice as fine.
        attractivity: Off-manifold report, when a start point was given.
    """

    grid: np.ndarray
    values: np.ndarray
    iterations: int
    converged: bool
    updates: list[float]
    clamp_events: int
    residual: float
    verification_grid: np.ndarray
    attractivity: AttractivityReport | None = None

    def __call__(self, theta) -> np.ndarray:
        return _clamped_spline(self.grid, self.values)(theta)


def _clamped_spline(grid: np.ndarray, values: np.ndarray) -> Callable:
    # Cubic spline inside the grid, linear continuation from the end points outside.
    spline = CubicSpline(grid, values)
    lo, hi = grid[0], grid[-1]
    ends = {lo: (spline(lo), spline(lo, 1)), hi: (spline(hi), spline(hi, 1))}

    def fn(x, nu: int = 0):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, lo, hi)
        val = spline(xc, nu)
        for edge, mask in ((lo, x < lo), (hi, x > hi)):
            if np.any(mask):
                v, d = ends[edge]
                val = np.where(mask, v + d * (x - edge) if nu == 0 else d, val)
        return val

    return fn


def _solve_preimage(loss, beta, h, g, zeta, lo, hi, max_newton: int = 60) -> tuple[np.ndarray, int]:
    # Solve zeta = theta - h L'(theta)/(1-beta) + h^2 beta g(theta) for theta, vectorized.
    c = h / (1 - beta)
    theta = zeta.copy()
    for _ in range(max_newton):
        F = theta - c * _scalar_deriv(loss, theta, 1) + h**2 * beta * g(theta) - zeta
        dF = 1 - c * _scalar_deriv(loss, theta, 2) + h**2 * beta * g(theta, 1)
        # Safeguard: fall back to the contracting fixed-point step where dF is small.
        step = np.where(dF > 0.1, F / np.where(dF > 0.1, dF, 1.0), F)
        theta = theta - step
        if np.max(np.abs(step)) <= 1e-15 * (1 + np.max(np.abs(theta))):
            break
    else:
        bad = int(np.argmax(np.abs(step)))
        raise SolverError(f"preimage solve failed at grid point zeta = {zeta[bad]:.6g}")
    clamps = int(np.count_nonzero((theta < lo) | (theta > hi)))
    return theta, clamps


def manifold_fixed_point(loss: DerivativeOracle, beta: float, h: float, radius: float | None = None,
                         center: float = 0.0, n_grid: int = 2001, tol: float = 1e-10, max_iter: int = 500,
                         theta0: float | None = None, v0: float = 0.0, attractivity_steps: int = 80,
                         margin: float = 0.05) -> ManifoldResult:
    """Picard iteration ``g <- T g`` for the one-dimensional invariant manifold.

    ``T g(zeta) = (L'(zeta) - L'(theta)) / (h (1 - beta)) + beta g(theta)``
    where ``theta`` solves ``zeta = theta - h L'(theta)/(1-beta) + h^2 beta g(theta)``.
    ``g`` is represented by a cubic spline through its grid values.

    Args:
        loss: One-dimensional oracle with bounded derivatives.
        beta: Momentum parameter.
        h: Step size; ``h sup|L''| <= (1 - beta) / 2`` is required on the grid.
        radius: Half-width ``R`` of the grid. If omitted, an HB run from
            ``theta0`` sets ``R`` so the run stays in the inner 80%.
        center: Grid center.
        n_grid: Number of grid points.
        tol: Sup-norm update tolerance.
        max_iter: Iteration cap.
        theta0: Start of the off-manifold HB run for the attractivity report.
        v0: Its initial velocity.
        attractivity_steps: Length of that run.
        margin: Added to ``beta`` for the geometric bound.

    Raises:
        CapabilityError: If ``loss`` is not one-dimensional.
        SolverError: If a preimage solve fails.
        DivergenceError: If the updates grow steadily.
    """
    if loss.dim != 1:
        raise CapabilityError("the manifold solver handles one-dimensional losses only")
    if not 0 < beta < 1 or h <= 0:
        raise InvalidArgumentError("need 0 < beta < 1 and h > 0")
    loss.require_order(3)
    hb_thetas = hb_vs = None
    if theta0 is not None:
        hb_thetas, hb_vs = _scalar_hb(loss, beta, h, theta0, v0, attractivity_steps)
    if radius is None:
        if hb_thetas is None:
            raise InvalidArgumentError("give a radius or a start point")
        radius = max(float(np.max(np.abs(hb_thetas - center))) / 0.8, 1e-3)
    grid = np.linspace(center - radius, center + radius, n_grid)
    lo, hi = grid[0], grid[-1]
    curv = float(np.max(np.abs(_scalar_deriv(loss, grid, 2))))
    if h * curv > 0.5 * (1 - beta):
        raise InvalidArgumentError(f"h = {h} is too large for curvature {curv:.4g} at beta = {beta}")

    c = 1 / (h * (1 - beta))
    grad_grid = _scalar_deriv(loss, grid, 1)
    values = np.zeros(n_grid)
    updates: list[float] = []
    clamps = 0
    converged = False
    growth = 0
    it = 0
    for it in range(1, max_iter + 1):
        g = _clamped_spline(grid, values)
        theta, clamps = _solve_preimage(loss, beta, h, g, grid, lo, hi)
        new = c * (grad_grid - _scalar_deriv(loss, theta, 1)) + beta * g(theta)
        upd = float(np.max(np.abs(new - values)))
        values = new
        if updates and upd > updates[-1]:
            growth += 1
            if growth >= 5:
                raise DivergenceError(f"Picard updates grew for {growth} iterations", it)
        else:
            growth = 0
        updates.append(upd)
        if upd < tol:
            converged = True
            break

    g = _clamped_spline(grid, values)
    inner = 0.8 * radius
    verify = np.linspace(center - inner, center + inner, 2 * n_grid - 1)
    residual = float(np.max(np.abs(manifold_residual(loss, beta, h, g, verify))))
    report = None
    if hb_thetas is not None:
        r = np.abs(hb_vs + _scalar_deriv(loss, hb_thetas, 1) / (1 - beta) - h * g(hb_thetas))
        base = beta + margin
        ratios = r / (base ** np.arange(r.size) * r[0]) if r[0] > 0 else np.zeros_like(r)
        bad = np.nonzero(ratios > 1)[0]
        report = AttractivityReport(r, base, ratios, bad.size == 0, int(bad[0]) if bad.size else None, hb_thetas)
    return ManifoldResult(grid, values, it, converged, updates, clamps, residual, verify, report)


def _scalar_hb(loss, beta, h, theta0, v0, steps):
    th, v = float(theta0), float(v0)
    ths, vs = [th], [v]
    for n in range(steps):
        g = float(_scalar_deriv(loss, np.array(th), 1))
        th, v = th - h * g + h * beta * v, beta * v - g
        if not math.isfinite(th) or abs(th) > DIVERGENCE_THRESHOLD:
            raise DivergenceError("heavy-ball run diverged", n)
        ths.append(th)
        vs.append(v)
    return np.array(ths), np.array(vs)
