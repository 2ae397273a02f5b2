import math

import mpmath
import numpy as np
import pytest

from fp_bandits.estimation import (ConfidenceParams, History, InvalidDelta, NoConvergence, beta, fit_mle, gamma,
                                   neg_log_likelihood, regularized_gradient, tail_multiplier)
from fp_bandits.links import linear_link, log_partition, logistic_link, mu_dot, poisson_link

E1 = np.array([1.0, 0.0])


def random_history(rng, d, t, link):
    h = History(d)
    theta = rng.standard_normal(d)
    theta *= 2.0 / np.linalg.norm(theta)
    for _ in range(t):
        x = rng.standard_normal(d)
        x /= max(1.0, np.linalg.norm(x))
        z = x @ theta
        if link.kind.value == "logistic":
            r = float(rng.random() < 1 / (1 + np.exp(-z)))
        else:
            r = float(np.clip(z + rng.standard_normal(), -3, 3))
        h.append(x, r)
    return h


class TestHistory:
    def test_running_statistics(self, rng):
        h = History(3, capacity=2)
        X = rng.standard_normal((7, 3))
        r = rng.standard_normal(7)
        for x, y in zip(X, r):
            h.append(x, y)
        assert len(h) == 7
        np.testing.assert_allclose(h.gram, X.T @ X, rtol=1e-12)
        np.testing.assert_allclose(h.xr, X.T @ r, rtol=1e-12)
        np.testing.assert_array_equal(h.X, X)

    def test_loss_lipschitz_bound(self):
        h = History.from_pairs([([3.0, 4.0], -1.0), ([1.0, 0.0], 0.5)])
        # (|r| + R) ||x|| summed with R = 2
        assert h.loss_lipschitz_bound(2.0) == pytest.approx(3.0 * 5.0 + 2.5 * 1.0)


class TestNegLogLikelihood:
    def test_empty(self):
        assert neg_log_likelihood(logistic_link(), History(2), [0.3, 1.0]) == 0.0

    def test_linear_single_point(self):
        h = History.from_pairs([(E1, 1.0)])
        assert neg_log_likelihood(linear_link(), h, E1) == pytest.approx(-0.5)

    def test_logistic_at_origin(self):
        h = History.from_pairs([(E1, 1.0)])
        assert neg_log_likelihood(logistic_link(), h, np.zeros(2)) == pytest.approx(math.log(2))

    def test_logistic_large_logits_finite(self):
        h = History.from_pairs([(E1, 0.0)])
        val = neg_log_likelihood(logistic_link(), h, [800.0, 0.0])
        assert val == pytest.approx(800.0)


class TestFitMLE:
    def test_linear_single_point(self):
        st = fit_mle(linear_link(), History.from_pairs([(E1, 1.0)]), 1.0)
        np.testing.assert_allclose(st.theta_hat, [0.5, 0.0])

    @pytest.mark.parametrize("link", [linear_link(), logistic_link(), poisson_link()], ids=lambda l: l.kind.value)
    def test_empty_history_is_pure_regularizer(self, link):
        st = fit_mle(link, History(3), 0.7)
        np.testing.assert_array_equal(st.theta_hat, np.zeros(3))
        np.testing.assert_array_equal(st.H_hat, 0.7 * np.eye(3))
        np.testing.assert_array_equal(st.V, 0.7 * np.eye(3))
        assert st.t == 1

    def test_logistic_balanced_labels(self):
        pairs = [(E1, 1.0), (E1, 0.0)] * 50
        st = fit_mle(logistic_link(), History.from_pairs(pairs), 1e-4)
        # brute-force 1-d grid oracle over the first coordinate
        grid = np.linspace(-1, 1, 20001)
        loss = 50 * (log_partition(logistic_link(), grid) - grid) + 50 * log_partition(logistic_link(), grid)
        loss += 0.5e-4 * grid**2
        best = grid[np.argmin(loss)]
        assert abs(st.theta_hat[0]) <= 0.01
        assert abs(st.theta_hat[0] - best) <= 1e-4

    def test_linear_matches_ridge(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 11))
            t = int(rng.integers(0, 51))
            lam = float(rng.uniform(0.1, 2.0))
            h = random_history(rng, d, t, linear_link())
            st = fit_mle(linear_link(), h, lam)
            X, r = h.X, h.r
            ridge = np.linalg.solve(lam * np.eye(d) + X.T @ X, X.T @ r)
            assert np.max(np.abs(st.theta_hat - ridge)) <= 1e-8
            np.testing.assert_array_equal(st.H_hat, st.V)

    def test_first_order_optimality(self, rng):
        for _ in range(30):
            d = int(rng.integers(1, 8))
            h = random_history(rng, d, int(rng.integers(1, 200)), logistic_link())
            st = fit_mle(logistic_link(), h, 0.05)
            assert st.converged
            assert np.linalg.norm(regularized_gradient(logistic_link(), h, 0.05, st.theta_hat)) <= 1e-6

    def test_separable_data_is_damped(self):
        pairs = [(E1, 1.0), (-E1, 0.0), (np.array([0.0, 1.0]), 1.0)]
        st = fit_mle(logistic_link(), History.from_pairs(pairs), 1e-4)
        assert np.all(np.isfinite(st.theta_hat))
        assert st.converged

    def test_no_convergence_is_reported(self):
        pairs = [(E1, 1.0), (-E1, 0.0)] * 3
        h = History.from_pairs(pairs)
        st = fit_mle(logistic_link(), h, 1e-6, max_iter=2)
        assert not st.converged and st.grad_norm > 1e-8
        with pytest.raises(NoConvergence) as info:
            fit_mle(logistic_link(), h, 1e-6, max_iter=2, strict=True)
        assert info.value.grad_norm > 1e-8

    def test_warm_start_agrees_with_cold(self, rng):
        h = random_history(rng, 4, 80, logistic_link())
        cold = fit_mle(logistic_link(), h, 0.1)
        warm = fit_mle(logistic_link(), h, 0.1, warm_start=cold.theta_hat + 0.3)
        np.testing.assert_allclose(warm.theta_hat, cold.theta_hat, atol=1e-9)

    @pytest.mark.parametrize("link", [logistic_link(), poisson_link()])
    def test_hessian_hint_is_speed_only(self, rng, link):
        h = random_history(rng, 4, 60, link)
        first = fit_mle(link, h, 0.1)
        assert first.newton_hessian[1] == 60
        for _ in range(15):
            x = rng.standard_normal(4) / 3.0
            h.append(x, float(rng.random() < 0.5))
        cold = fit_mle(link, h, 0.1)
        hinted = fit_mle(link, h, 0.1, warm_start=first.theta_raw, hessian_hint=first.newton_hessian)
        assert hinted.converged and hinted.newton_hessian[1] == 75
        np.testing.assert_allclose(hinted.theta_hat, cold.theta_hat, atol=1e-9)
        # a misleading hint is abandoned, not trusted
        bad = fit_mle(link, h, 0.1, hessian_hint=(100.0 * np.eye(4), 0))
        assert bad.converged
        np.testing.assert_allclose(bad.theta_hat, cold.theta_hat, atol=1e-9)

    def test_norm_clipping(self):
        pairs = [(E1, 3.0)] * 20
        st = fit_mle(linear_link(), History.from_pairs(pairs), 1.0, theta_bound=1.5)
        assert st.clipped
        assert np.linalg.norm(st.theta_hat) == pytest.approx(1.5)
        assert st.theta_raw[0] == pytest.approx(60 / 21)

    def test_gram_invariants(self, rng):
        h = random_history(rng, 5, 60, logistic_link())
        st = fit_mle(logistic_link(), h, 0.3)
        assert np.linalg.eigvalsh(st.H_hat).min() >= 0.3 - 1e-10
        assert np.linalg.eigvalsh(st.V).min() >= 0.3 - 1e-10
        w = mu_dot(logistic_link(), h.X @ st.theta_hat)
        np.testing.assert_allclose(st.H_hat, 0.3 * np.eye(5) + (h.X * w[:, None]).T @ h.X, rtol=1e-12)
        assert st.t == len(h) + 1

    def test_derivative_floor_enters_weighted_gram(self, rng):
        link = logistic_link(derivative_floor=0.25)
        h = random_history(rng, 3, 40, link)
        st = fit_mle(link, h, 0.1)
        np.testing.assert_allclose(st.H_hat, 0.1 * np.eye(3) + 0.25 * h.X.T @ h.X, rtol=1e-12)

    def test_weighted_gram_dominates_scaled_vanilla(self, rng):
        for _ in range(50):
            d = int(rng.integers(1, 6))
            lam = 0.5
            h = random_history(rng, d, int(rng.integers(5, 100)), logistic_link())
            st = fit_mle(logistic_link(), h, lam)
            kappa = float(np.min(mu_dot(logistic_link(), h.X @ st.theta_hat)))
            Vbar = (lam / kappa) * np.eye(d) + h.X.T @ h.X
            for x in rng.standard_normal((5, d)):
                lhs = x @ np.linalg.solve(st.H_hat, x)
                rhs = x @ np.linalg.solve(Vbar, x) / kappa
                assert lhs <= rhs * (1 + 1e-9)


class TestConfidenceWidths:
    def test_beta_closed_form(self):
        p = ConfidenceParams(delta=0.1, horizon=100, M_mu=0.0, d=2, lam=1.0, loss_bound=2.0)
        mp = mpmath.sqrt(4 + 2 * (mpmath.log(10) + 2 * mpmath.log(2 * mpmath.e * 2 / 2)))
        assert beta(p) == pytest.approx(float(mp), rel=1e-14)
        assert round(beta(p), 4) == 3.9214

    def test_beta_floor_term(self):
        p = ConfidenceParams(delta=1 - 1e-15, horizon=1, M_mu=0.0, d=2, lam=1.0, loss_bound=0.0)
        assert beta(p) == pytest.approx(2.0, abs=1e-6)

    def test_beta_monotone(self):
        p = ConfidenceParams(delta=0.1, horizon=100, M_mu=1.0, d=3, lam=1.0, loss_bound=10.0)
        assert beta(p.at(20.0)) > beta(p)
        assert beta(p, 0.01) > beta(p, 0.1)
        bounds = np.cumsum(np.full(50, 1.7))
        vals = [beta(p.at(b)) for b in bounds]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_invalid_delta(self):
        p = ConfidenceParams(delta=0.1, horizon=10, M_mu=0.0, d=2, lam=1.0, loss_bound=5.0)
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(InvalidDelta):
                beta(p, bad)

    def test_delta_prime(self):
        p = ConfidenceParams(delta=0.2, horizon=50, M_mu=0.0, d=2, lam=1.0)
        assert p.delta_prime == 0.2 / 200

    def test_tail_multiplier_values(self):
        assert tail_multiplier(2 / math.e**2) == pytest.approx(2.0)
        assert tail_multiplier(0.5) == pytest.approx(float(mpmath.sqrt(2 * mpmath.log(4))))
        assert round(tail_multiplier(0.5), 4) == 1.6651

    def test_gamma_composition(self):
        T = 7
        p = ConfidenceParams(delta=0.3, horizon=T, M_mu=1.0, d=3, lam=1.0, loss_bound=40.0)
        dp = 0.3 / (4 * T)
        expected = beta(p, dp) * math.sqrt(2 * math.log(2 / dp))
        assert gamma(p) == pytest.approx(expected, rel=1e-14)
        assert math.sqrt(2 * math.log(2 / dp)) == pytest.approx(math.sqrt(2 * math.log(8 * T / 0.3)))

    def test_gamma_at_least_beta(self):
        p = ConfidenceParams(delta=0.05, horizon=1000, M_mu=0.0, d=4, lam=1.0, loss_bound=100.0)
        for delta in (0.9, 0.5, 0.1, 1e-3):
            assert gamma(p, delta) >= beta(p, delta / (4 * p.horizon))
