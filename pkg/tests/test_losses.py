import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbmem.coefficients import CoefficientContext, f_treesum
from hbmem.errors import CapabilityError, InvalidArgumentError
from hbmem.losses import (
    DenseTensorOracle,
    MiniBatchFamily,
    RidgeLoss,
    builtin_loss,
    cubic_quartic_loss,
    empirical_covariance,
    grad_trace_covariance,
    least_squares_samples,
    minibatch_benchmark,
    permutation_average_f2,
    quadratic_loss,
    quadratic_samples,
    quartic_benchmark,
    quartic_loss,
    sample_losses,
    sinusoid_loss,
)
from oracles import fd_gradient


def builtins():
    A = [[1.0, 0.2], [0.2, 0.5]]
    return {
        "quadratic": quadratic_loss(A, [0.1, -0.3]),
        "quartic": quartic_loss([0.3, 0.1], A, [0.2, 0.0]),
        "cubic_quartic": cubic_quartic_loss(A, [0.0, 0.1], [[1.0, -0.5], [0.3, 0.8]], [0.2, -0.1], [0.1, 0.2]),
        "sinusoid": sinusoid_loss(2, 0.7, 1.3, A),
        "least_squares": RidgeLoss.mean(least_squares_samples([[1.0, 2.0], [0.5, -1.0], [0.0, 1.0]], [1.0, 0.0, -1.0])),
    }


def f2_literal(losses, theta, n, beta):
    """f_2 from its defining double sum over step indices."""
    out = np.zeros_like(theta)
    for b in range(n):
        inner = np.zeros_like(theta)
        for l in range(1, b + 2):
            for c in range(n - l + 1):
                inner += beta**c * losses[n - l - c].grad(theta)
        out += beta**b * losses[n - 1 - b].hvp(theta, inner)
    return -beta * out


class TestOracles:
    def test_quadratic_basics(self):
        loss = quadratic_loss(np.eye(2))
        np.testing.assert_allclose(loss.grad([3.0, -1.0]), [3.0, -1.0])
        u = np.array([0.3, 0.1])
        np.testing.assert_array_equal(loss.contract([1.0, 2.0], 3, [u, u]), 0.0)

    def test_quartic_monomial(self):
        loss = quartic_loss([1.0])
        e = np.array([1.0])
        got = [loss.contract([2.0], k, [e] * (k - 1))[0] for k in (1, 2, 3, 4)]
        np.testing.assert_allclose(got, [32.0, 48.0, 48.0, 24.0])
        np.testing.assert_array_equal(loss.contract([2.0], 5, [e] * 4), 0.0)

    @pytest.mark.parametrize("name", list(builtins()))
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_finite_differences(self, name, k, rng):
        loss = builtins()[name]
        theta = rng.normal(size=2) * 0.5
        dirs = [rng.normal(size=2) for _ in range(k - 1)]
        if k == 1:
            fd = fd_gradient(loss.value, theta)
        else:
            # d/dtheta of <grad^(k-1) L[dirs[1:]], dirs[0]>
            fd = fd_gradient(lambda x: loss.contract(x, k - 1, dirs[1:]) @ dirs[0], theta)
        np.testing.assert_allclose(loss.contract(theta, k, dirs), fd, rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("name", list(builtins()))
    def test_direction_symmetry(self, name, rng):
        loss = builtins()[name]
        theta = rng.normal(size=2)
        dirs = [rng.normal(size=2) for _ in range(3)]
        ref = loss.contract(theta, 4, dirs)
        for perm in itertools.permutations(dirs):
            np.testing.assert_allclose(loss.contract(theta, 4, list(perm)), ref, rtol=1e-13, atol=1e-15)

    def test_matches_dense_tensors(self, rng):
        # (theta_1 + 0.5 theta_2)^3 * 0.2 + theta_1^4 * 0.1 + theta_2^4 * 0.3
        monomials = {(3, 0): 0.2, (2, 1): 0.3, (1, 2): 0.15, (0, 3): 0.025, (4, 0): 0.1, (0, 4): 0.3}
        dense = DenseTensorOracle(2, monomials)
        ridge = cubic_quartic_loss(np.zeros((2, 2)), None, [[1.0, 0.5], [1.0, 0.0], [0.0, 1.0]],
                                   [0.2, 0.0, 0.0], [0.0, 0.1, 0.3])
        theta = rng.normal(size=2)
        np.testing.assert_allclose(ridge.value(theta), dense.value(theta), rtol=1e-13)
        for k in range(1, 6):
            dirs = [rng.normal(size=2) for _ in range(k - 1)]
            np.testing.assert_allclose(ridge.contract(theta, k, dirs), dense.contract(theta, k, dirs),
                                       rtol=1e-12, atol=1e-12)

    def test_broadcasting(self, rng):
        loss = builtins()["cubic_quartic"]
        thetas = rng.normal(size=(5, 2))
        u = rng.normal(size=(5, 2))
        batched = loss.contract(thetas, 3, [u, u])
        for i in range(5):
            np.testing.assert_allclose(batched[i], loss.contract(thetas[i], 3, [u[i], u[i]]), rtol=1e-14)

    def test_hessian(self):
        loss = quartic_loss([1.0, 0.0], np.eye(2))
        np.testing.assert_allclose(loss.hessian([1.0, 3.0]), [[13.0, 0.0], [0.0, 1.0]])

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            quadratic_loss([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(InvalidArgumentError):
            quadratic_loss(np.eye(2)).contract([0.0, 0.0], 2, [])
        with pytest.raises(CapabilityError):
            RidgeLoss(2, np.eye(2), max_order=2).contract([0.0, 0.0], 3, [np.ones(2)] * 2)
        with pytest.raises(InvalidArgumentError):
            builtin_loss("nope", {})
        with pytest.raises(InvalidArgumentError):
            builtin_loss("quadratic", {})

    def test_builtin_construction(self):
        loss = builtin_loss("quartic", {"c": [1.0], "A": [[2.0]]})
        np.testing.assert_allclose(loss.grad([1.0]), [6.0])
        ls = builtin_loss("least_squares", {"design_matrix": [[1.0], [2.0]], "targets": [1.0, 0.0]})
        # mean of 1/2 (x - 1)^2 and 1/2 (2x)^2 at x = 1: gradient (0 + 4)/2
        np.testing.assert_allclose(ls.grad([1.0]), [2.0])

    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=2))
    @settings(max_examples=30, deadline=None)
    def test_mean_is_pointwise_average(self, theta):
        samples = least_squares_samples([[1.0, 2.0], [0.5, -1.0], [0.0, 1.0]], [1.0, 0.0, -1.0])
        mean = RidgeLoss.mean(samples)
        np.testing.assert_allclose(mean.value(theta), np.mean([s.value(theta) for s in samples]), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(mean.grad(theta), np.mean([s.grad(theta) for s in samples], axis=0),
                                   rtol=1e-12, atol=1e-12)

    def test_benchmarks(self):
        loss, theta0 = quartic_benchmark()
        assert loss.dim == 2 and theta0.shape == (2,)
        fam, th = minibatch_benchmark(seed=0)
        assert fam.n_samples == 8 and fam.batch_size == 2
        fam2, _ = minibatch_benchmark(seed=0)
        assert fam.permutation == fam2.permutation


class TestMiniBatchFamily:
    def make(self, rng, P=6, B=2, **kw):
        mats = [np.diag(rng.uniform(0.5, 2.0, size=2)) for _ in range(P)]
        return MiniBatchFamily(quadratic_samples(mats, rng.normal(size=(P, 2))), B, **kw)

    def test_batch_is_permuted_mean(self, rng):
        fam = self.make(rng, permutation=(3, 0, 5, 1, 4, 2))
        theta = rng.normal(size=2)
        np.testing.assert_allclose(fam.batch(0).value(theta), 0.5 * (fam.samples[3].value(theta) + fam.samples[0].value(theta)))
        np.testing.assert_allclose(fam.batch(2).grad(theta), 0.5 * (fam.samples[4].grad(theta) + fam.samples[2].grad(theta)))

    def test_batch_mean_identity(self, rng):
        theta = rng.normal(size=2)
        for seed in range(4):
            fam = self.make(rng, seed=seed)
            avg = np.mean([fam.batch(k).value(theta) for k in range(fam.n_batches)])
            np.testing.assert_allclose(avg, fam.full().value(theta), rtol=1e-13)

    def test_epochs(self, rng):
        fixed = self.make(rng, seed=1)
        assert fixed.batch(3) is fixed.batch(0)
        shuffled = self.make(rng, seed=1, reshuffle=True)
        assert shuffled.epoch_permutation(0) == fixed.permutation
        assert shuffled.epoch_permutation(1) == shuffled.epoch_permutation(1)
        assert sorted(shuffled.epoch_permutation(2)) == list(range(6))

    def test_errors(self, rng):
        with pytest.raises(InvalidArgumentError):
            self.make(rng, P=5, B=2)
        with pytest.raises(InvalidArgumentError):
            self.make(rng, P=4, B=2, permutation=(0, 0, 1, 2))
        with pytest.raises(InvalidArgumentError):
            sample_losses({"name": "least_squares"})

    def test_sample_losses(self):
        s = sample_losses({"name": "quadratic_samples", "matrices": [[[1.0]], [[2.0]]], "centers": [[1.0], [0.0]]})
        np.testing.assert_allclose([x.grad([0.0])[0] for x in s], [-1.0, 0.0])


class TestCovariance:
    def test_identical_samples(self, rng):
        s = quadratic_samples([np.eye(2)] * 4, [[1.0, 2.0]] * 4)
        fam = MiniBatchFamily(s, 2)
        np.testing.assert_allclose(empirical_covariance(fam, rng.normal(size=2)), 0.0, atol=1e-15)

    def test_two_samples(self):
        # Gradients (1, 0) and (-1, 0) at theta = 0.
        s = quadratic_samples([np.eye(2)] * 2, [[-1.0, 0.0], [1.0, 0.0]])
        fam = MiniBatchFamily(s, 1)
        np.testing.assert_allclose(empirical_covariance(fam, [0.0, 0.0]), [[1.0, 0.0], [0.0, 0.0]])

    def test_least_squares_trace(self, rng):
        X = rng.normal(size=(6, 3))
        y = rng.normal(size=6)
        fam = MiniBatchFamily(least_squares_samples(X, y), 2)
        theta = rng.normal(size=3)
        G = X * (X @ theta - y)[:, None]
        direct = np.sum((G - G.mean(axis=0)) ** 2) / 6
        np.testing.assert_allclose(np.trace(empirical_covariance(fam, theta)), direct, rtol=1e-12)

    def test_trace_gradient(self, rng):
        X = rng.normal(size=(4, 2))
        y = rng.normal(size=4)
        fam = MiniBatchFamily(least_squares_samples(X, y), 2)
        theta = rng.normal(size=2)
        fd = fd_gradient(lambda x: np.trace(empirical_covariance(fam, x)), theta)
        np.testing.assert_allclose(grad_trace_covariance(fam, theta), fd, rtol=1e-6)


class TestPermutationAverage:
    def family(self, rng, P=4, B=2):
        mats = []
        for _ in range(P):
            M = rng.normal(size=(2, 2))
            mats.append(M @ M.T + 0.3 * np.eye(2))
        return MiniBatchFamily(quadratic_samples(mats, rng.normal(size=(P, 2))), B)

    def test_literal_sum_matches_tree_sum(self, rng):
        fam = self.family(rng, P=6, B=2)
        losses = [fam.batch(k) for k in range(3)]
        theta = rng.normal(size=2)
        ctx = CoefficientContext(0.6, 2, lambda s: losses[s], theta)
        np.testing.assert_allclose(f_treesum(ctx, 2), f2_literal(losses, theta, 2, 0.6), rtol=1e-12)

    @pytest.mark.parametrize("beta", [0.3, 0.8])
    def test_exhaustive_mean(self, rng, beta):
        fam = self.family(rng)
        theta = rng.normal(size=2)
        avg = permutation_average_f2(fam, theta, 1, beta)
        assert avg.n_permutations == math.factorial(4)
        total = np.zeros(2)
        same = np.zeros(2)
        for perm in itertools.permutations(range(4)):
            losses = [fam.batch(k, perm) for k in range(2)]
            total += f2_literal(losses, theta, 1, beta)
            same += losses[0].hvp(theta, losses[0].grad(theta))
        np.testing.assert_allclose(avg.mean, total / 24, rtol=1e-12)
        np.testing.assert_allclose(avg.same_batch_mean, same / 24, rtol=1e-12)
        np.testing.assert_allclose(avg.mean, avg.prediction, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(avg.same_batch_mean, avg.same_batch_prediction, rtol=1e-12)

    def test_cross_batch(self, rng):
        fam = self.family(rng, P=6, B=2)
        theta = rng.normal(size=2)
        avg = permutation_average_f2(fam, theta, 2, 0.5)
        np.testing.assert_allclose(avg.cross_batch_mean, avg.cross_batch_prediction, rtol=1e-12)
        np.testing.assert_allclose(avg.same_batch_mean, avg.same_batch_prediction, rtol=1e-12)

    def test_single_batch(self, rng):
        fam = self.family(rng, P=4, B=4)
        theta = rng.normal(size=2)
        avg = permutation_average_f2(fam, theta, 0, 0.5)
        full = fam.full()
        ctx = CoefficientContext(0.5, 0, lambda s: full, theta)
        np.testing.assert_allclose(avg.mean, f_treesum(ctx, 2), atol=1e-15)

    def test_limits(self, rng):
        fam = self.family(rng, P=4, B=2)
        with pytest.raises(InvalidArgumentError):
            permutation_average_f2(fam, np.zeros(2), 2, 0.5)
        big = self.family(rng, P=10, B=2)
        with pytest.raises(CapabilityError):
            permutation_average_f2(big, np.zeros(2), 4, 0.5)
