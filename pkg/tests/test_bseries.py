import itertools
from fractions import Fraction

import numpy as np
import pytest

from hbmem.bseries import (
    TreeSeries,
    a_recursion_residual,
    at_beta,
    bea_series,
    elementary_differentials,
    eval_series,
    gradient_step_series,
    graft,
    limiting_bea_series,
    limiting_memoryless_series,
    solve_a_g,
    subtree_convolution,
)
from hbmem.errors import CapabilityError, InvalidArgumentError
from hbmem.losses import DenseTensorOracle, cubic_quartic_loss, quadratic_loss
from hbmem.polynomials import BETA, ONE, BetaRational, e_coefficient
from hbmem.trees import LEAF, chain, enumerate_trees, from_parents, rake, trees_up_to


def br(*coeffs, k=0):
    return BetaRational(coeffs, k)


def random_series(rng, order, empty=0.0, max_size=None):
    trees = [t for t in trees_up_to(max_size or order)]
    return TreeSeries({t: float(rng.normal()) for t in trees}, order, empty)


def mixed_loss():
    return cubic_quartic_loss(
        [[1.0, 0.3, 0.0], [0.3, 0.7, 0.1], [0.0, 0.1, 0.9]], [0.2, -0.1, 0.3],
        [[1.0, 0.5, -0.2], [0.1, -0.4, 1.0]], [0.3, -0.2], [0.1, 0.05],
    )


def brute_force_convolution(a: TreeSeries, c: TreeSeries, parents) -> object:
    """Labeled-convention marking sum over explicit antichains of a labeled tree."""
    m = len(parents)
    kids = {i: [j for j in range(m) if parents[j] == i] for i in range(m)}

    def below(v):
        out = {v}
        for k in kids[v]:
            out |= below(k)
        return out

    def shape(vertices, root):
        order = [root] + sorted(v for v in vertices if v != root)
        idx = {v: i for i, v in enumerate(order)}
        return from_parents([-1] + [idx[parents[v]] for v in order[1:]])

    total = c.empty * a.labeled(from_parents(parents))
    for r in range(0, m):
        for cut in itertools.combinations(range(1, m), r):
            sets = [below(v) for v in cut]
            if any(u != v and u in below(v) for u in cut for v in cut):
                continue
            removed = set().union(*sets) if sets else set()
            term = c.labeled(shape(set(range(m)) - removed, 0))
            for v, s in zip(cut, sets):
                term = term * a.labeled(shape(s, v))
            total = total + term
    return total


class TestConvolution:
    def test_identity_laws(self, rng):
        a = random_series(rng, 4, empty=1.0)
        ident = TreeSeries({}, 4, 1.0)
        assert subtree_convolution(a, ident) == a
        c = random_series(rng, 4, empty=0.7)
        assert subtree_convolution(ident, c) == c

    def test_gradient_step_series(self):
        # (a * l)(t) = -1/(1-beta) a(t_1)...a(t_deg) in the labeled convention.
        a, _ = solve_a_g(5)
        al = subtree_convolution(a, gradient_step_series(5))
        for t in trees_up_to(5):
            expect = br(-1, k=1)
            for c in t.children:
                expect = expect * a.labeled(c)
            assert al.labeled(t) == expect

    @pytest.mark.parametrize("m", [2, 3, 4, 5])
    def test_against_explicit_cuts(self, rng, m):
        a = random_series(rng, 5, empty=1.0)
        c = random_series(rng, 5, empty=0.4)
        conv = subtree_convolution(a, c)
        shapes = {}
        for parents in itertools.product(*[range(i) for i in range(1, m)]):
            p = (-1,) + parents
            shapes.setdefault(from_parents(p), p)
        for t, p in shapes.items():
            np.testing.assert_allclose(conv.labeled(t), brute_force_convolution(a, c, p), rtol=1e-12)

    def test_associative(self, rng):
        a = random_series(rng, 4, empty=1.0)
        b = random_series(rng, 4, empty=1.0)
        c = random_series(rng, 4, empty=1.0)
        lhs = subtree_convolution(subtree_convolution(a, b), c)
        rhs = subtree_convolution(a, subtree_convolution(b, c))
        for t in trees_up_to(4):
            np.testing.assert_allclose(lhs[t], rhs[t], rtol=1e-12, atol=1e-12)

    def test_numeric_composition(self, rng):
        # Evaluating B(c)(B(a)(theta)) differs from the composed series by O(h^5).
        loss = mixed_loss()
        theta = np.array([0.3, -0.2, 0.5])
        a = random_series(rng, 4, empty=1.0)
        c = random_series(rng, 4, empty=1.0)
        conv = subtree_convolution(a, c)
        errs = []
        for h in (0.02, 0.01, 0.005):
            inner = eval_series(a, h, theta, loss)
            errs.append(np.linalg.norm(eval_series(c, h, inner, loss) - eval_series(conv, h, theta, loss)))
        slope = np.polyfit(np.log([0.02, 0.01, 0.005]), np.log(errs), 1)[0]
        assert slope > 4.7


class TestFixedPoint:
    def test_known_low_order_values(self):
        a, g = solve_a_g(3)
        assert a.empty == ONE and a[LEAF] == br(-1, k=1)
        assert a[chain(2)] == br(0, -1, k=3)
        assert a.labeled(chain(3)) == br(0, -1, -1, k=5)
        assert a.labeled(rake(3)) == br(0, -1, -1, k=5)
        assert g.empty.is_zero() and g[LEAF] == 0

    @pytest.mark.parametrize("m", range(2, 7))
    def test_matched_coefficients(self, m):
        a, g = solve_a_g(6)
        lhs = subtree_convolution(a, gradient_step_series(6)) + subtree_convolution(a, g)
        for t in enumerate_trees(m):
            assert (lhs[t] - BETA * g[t]).is_zero()

    def test_leaf_is_outside_identity(self):
        # At the single vertex the left side is -1/(1-beta), not beta g = 0.
        a, g = solve_a_g(2)
        lhs = subtree_convolution(a, gradient_step_series(2)) + subtree_convolution(a, g)
        assert lhs[LEAF] == br(-1, k=1)

    @pytest.mark.parametrize("t", [t for t in trees_up_to(6) if t.vertex_count >= 2])
    def test_pure_a_rewriting(self, t):
        a, _ = solve_a_g(6)
        assert a_recursion_residual(a, t).is_zero()

    @pytest.mark.parametrize("t", [t for t in trees_up_to(5) if t.vertex_count >= 2])
    def test_tree_expression_observation(self, t):
        # Recorded observation: labeled a(t) = -beta e_{t,1} / (1-beta)^(2|t|-1).
        a, _ = solve_a_g(5)
        e = e_coefficient(t, symbolic_l=False, l=1)
        assert a.labeled(t) == -BETA * e * br(1, k=2 * t.vertex_count - 1)

    def test_order_limit(self):
        with pytest.raises(InvalidArgumentError):
            solve_a_g(9)


class TestGraft:
    def test_leaf_on_leaf(self):
        f = TreeSeries({LEAF: 2.0}, 3)
        b = TreeSeries({LEAF: 3.0}, 3)
        assert graft(f, b) == TreeSeries({chain(2): 6.0}, 3)

    def test_identity_term(self):
        f = TreeSeries({}, 3, 1.0)
        b = TreeSeries({LEAF: 3.0}, 3)
        assert graft(f, b) == b
        with pytest.raises(InvalidArgumentError):
            graft(b, f)

    def test_matches_directional_derivative(self, rng):
        loss = mixed_loss()
        theta = np.array([0.4, 0.1, -0.3])
        f = TreeSeries({t: float(rng.normal()) for t in trees_up_to(2)}, 4)
        b = TreeSeries({t: float(rng.normal()) for t in trees_up_to(2)}, 4)
        h = 0.7
        d = eval_series(b, h, theta, loss)
        eps = 1e-5
        fd = (eval_series(f, h, theta + eps * d, loss) - eval_series(f, h, theta - eps * d, loss)) / (2 * eps)
        np.testing.assert_allclose(eval_series(graft(f, b), h, theta, loss), fd, rtol=1e-7)

    def test_pre_lie(self, rng):
        f = random_series(rng, 5, max_size=2)
        g = random_series(rng, 5, max_size=2)
        k = random_series(rng, 5, max_size=1)

        def assoc(x, y, z):
            return graft(graft(x, y), z) - graft(x, graft(y, z))

        lhs, rhs = assoc(f, g, k), assoc(f, k, g)
        for t in trees_up_to(5):
            np.testing.assert_allclose(lhs[t], rhs[t], rtol=1e-12, atol=1e-12)


class TestLimitingSeries:
    def test_memoryless_low_orders(self):
        s = limiting_memoryless_series(3)
        assert s[LEAF] == br(-1, k=1)
        assert s[chain(2)] == br(0, -1, k=3)
        assert s[chain(3)] == br(0, -1, -1, k=5)
        assert s[rake(3)] == br(0, Fraction(-1, 2), Fraction(-1, 2), k=5)

    def test_bea_order_three(self):
        s = limiting_bea_series(3)
        assert s[LEAF] == br(-1, k=1)
        assert s[chain(2)] == br(Fraction(-1, 2), Fraction(-1, 2), k=3)
        assert s[chain(3)] == br(Fraction(-1, 3), Fraction(-4, 3), Fraction(-1, 3), k=5)
        assert s[rake(3)] == br(Fraction(-1, 12), Fraction(-10, 12), Fraction(-1, 12), k=5)

    def test_bea_at_zero_momentum_is_gd(self):
        s = at_beta(limiting_bea_series(3), 0.0)
        assert s[LEAF] == -1.0 and s[chain(2)] == -0.5
        np.testing.assert_allclose([s[chain(3)], s[rake(3)]], [-1 / 3, -1 / 12], rtol=1e-15)

    def test_bea_flow_reproduces_step(self):
        # RK4 flow of the order-3 modified field for time h matches the limiting
        # memoryless step to O(h^4).
        loss = mixed_loss()
        theta = np.array([0.2, 0.4, -0.1])
        beta = 0.4
        step = at_beta(limiting_memoryless_series(3), beta)
        fbar = at_beta(limiting_bea_series(3), beta)

        def field(x, h):
            return eval_series(fbar, h, x, loss) / h

        errs = []
        hs = [0.04, 0.02, 0.01]
        for h in hs:
            x = theta.copy()
            n_sub = 40
            dt = h / n_sub
            for _ in range(n_sub):
                k1 = field(x, h)
                k2 = field(x + dt / 2 * k1, h)
                k3 = field(x + dt / 2 * k2, h)
                k4 = field(x + dt * k3, h)
                x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            errs.append(np.linalg.norm(x - (theta + eval_series(step, h, theta, loss))))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope > 3.7

    def test_bea_series_generic_parts(self):
        # GD map theta - h grad L: modified field -grad L - h/2 H grad L - ...
        parts = {1: TreeSeries({LEAF: -1.0}, 3)}
        fbar = bea_series(parts, 3)
        assert fbar[2][chain(2)] == -0.5
        np.testing.assert_allclose([fbar[3][chain(3)], fbar[3][rake(3)]], [-1 / 3, -1 / 12])

    def test_order_limits(self):
        with pytest.raises(InvalidArgumentError):
            limiting_bea_series(7)
        with pytest.raises(InvalidArgumentError):
            limiting_memoryless_series(7)


class TestElementaryDifferentials:
    def test_identity_hessian(self):
        loss = quadratic_loss(np.eye(2))
        F = elementary_differentials([chain(2)], [1.0, 2.0], loss)
        np.testing.assert_allclose(F[chain(2)], [1.0, 2.0])

    def test_quadratic_branching_vanishes(self):
        loss = quadratic_loss([[2.0, 0.5], [0.5, 1.0]], [0.1, 0.2])
        F = elementary_differentials(trees_up_to(5), [0.3, -0.7], loss)
        for t, v in F.items():
            if t.max_degree() >= 2:
                np.testing.assert_array_equal(v, 0.0)

    def test_cherry_against_dense_tensors(self):
        # L = theta_1^2 theta_2 at (1, 1): grad = (2, 1), third derivative has only 112-type entries.
        oracle = DenseTensorOracle(2, {(2, 1): 1.0})
        F = elementary_differentials([rake(3)], [1.0, 1.0], oracle)
        g = np.array([2.0, 1.0])
        T = np.zeros((2, 2, 2))
        for idx in {(0, 0, 1), (0, 1, 0), (1, 0, 0)}:
            T[idx] = 2.0
        np.testing.assert_allclose(F[rake(3)], np.einsum("ijk,j,k->i", T, g, g))
        np.testing.assert_allclose(F[rake(3)], [8.0, 8.0])

    def test_capability(self):
        from hbmem.losses import RidgeLoss

        loss = RidgeLoss(2, np.eye(2), max_order=2)
        with pytest.raises(CapabilityError):
            elementary_differentials([rake(3)], [0.0, 0.0], loss)
