import math

import numpy as np
import pytest

from conftest import make_state
from fp_bandits.environments import EnvConfig
from fp_bandits.links import linear_link
from fp_bandits.perturbation import PerturbationScheme
from fp_bandits.verification import (OracleReport, check_anti_concentration, check_beta_coverage,
                                     check_concentration, check_epl, check_score_marginal, epl_bound, fp_scores,
                                     ts_scores)


class TestAntiConcentration:
    def test_gaussian(self, rng):
        rep = check_anti_concentration(PerturbationScheme.gaussian(), 5, 1_000_000, rng)
        assert rep.passed
        assert rep.statistic == pytest.approx(0.15866, abs=0.002)

    def test_uniform_ball(self, rng):
        rep = check_anti_concentration(PerturbationScheme.uniform_ball(), 2, 1_000_000, rng)
        assert rep.passed and rep.statistic >= 1 / (16 * math.sqrt(3 * math.pi))

    def test_isotropy(self, rng):
        a = check_anti_concentration(PerturbationScheme.gaussian(), 4, 400_000, rng, u=[1, 0, 0, 0])
        b = check_anti_concentration(PerturbationScheme.gaussian(), 4, 400_000, rng)
        assert abs(a.statistic - b.statistic) < 4 * math.sqrt(2 * 0.16 * 0.84 / 400_000)


class TestConcentration:
    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_gaussian(self, rng, delta):
        rep = check_concentration(PerturbationScheme.gaussian(), delta, 1_000_000, rng)
        assert rep.passed and rep.statistic >= 1 - delta - 0.0015

    def test_monotone_in_delta(self):
        covers = [check_concentration(PerturbationScheme.gaussian(), dl, 200_000,
                                      np.random.default_rng(3)).statistic for dl in (0.01, 0.1, 0.5, 0.9)]
        assert all(a >= b for a, b in zip(covers, covers[1:]))

    def test_near_one_width(self):
        assert PerturbationScheme().concentration_width(1 - 1e-12) == pytest.approx(math.sqrt(2 * math.log(2)), abs=1e-6)

    def test_uniform_ball(self, rng):
        assert check_concentration(PerturbationScheme.uniform_ball(), 0.1, 500_000, rng, d=3).passed

    def test_invalid_delta(self, rng):
        with pytest.raises(ValueError):
            check_concentration(PerturbationScheme(), 1.0, 10, rng)


class TestEPL:
    def test_empty(self):
        rep = check_epl([], 1.0, 3, 0)
        assert rep.passed and rep.statistic == 0.0

    def test_repeated_arm(self):
        T = 1000
        widths = np.sqrt(1.0 / (1.0 + np.arange(T)))
        rep = check_epl(widths, 1.0, 1, T)
        assert rep.passed
        assert rep.threshold == pytest.approx(2 * math.log(1 + T))

    def test_random_run(self, rng):
        d, lam, T = 4, 0.5, 400
        V = lam * np.eye(d)
        widths = []
        for _ in range(T):
            x = rng.standard_normal(d)
            x /= max(1.0, np.linalg.norm(x))
            widths.append(math.sqrt(x @ np.linalg.solve(V, x)))
            V += np.outer(x, x)
        assert check_epl(widths, lam, d, T).passed

    def test_violation_detected(self):
        assert not check_epl(np.ones(100), 1.0, 1, 100).passed
        assert epl_bound(1.0, 1, 100) < 100


class TestScoreMarginal:
    def test_unit_gram(self, rng):
        st = make_state([0.4, -0.3, 0.1])
        rep = check_score_marginal([1.0, 2.0, 0.5], st, 1.5, 100_000, rng)
        assert rep.passed and rep.statistic < 0.01

    def test_degenerate(self, rng):
        rep = check_score_marginal([1.0, 0.0], make_state([0.3, 0.2]), 0.0, 1000, rng)
        assert rep.passed and rep.statistic == 0.0

    def test_fp_and_ts_means_agree(self, rng):
        st = make_state([0.4, -0.3])
        x = np.array([0.6, 0.8])
        n = 100_000
        fp = fp_scores(x, st, 1.0, PerturbationScheme(), n, rng)
        ts = ts_scores(x, st, 1.0, n, rng)
        assert abs(fp.mean() - ts.mean()) < 4 * math.sqrt(2.0 / n)
        assert fp.std() == pytest.approx(1.0, abs=0.01)


class TestBetaCoverage:
    def test_linear_small(self):
        cfg = EnvConfig(link=linear_link(), d=2, K=10, T=200, S=1.0)
        rep = check_beta_coverage(linear_link(), cfg, 40, seed=3, delta=0.1)
        assert rep.passed and rep.statistic <= 0.1

    def test_delta_near_one_finite(self):
        cfg = EnvConfig(link=linear_link(), d=2, K=5, T=50, S=1.0)
        rep = check_beta_coverage(linear_link(), cfg, 5, delta=0.999)
        assert 0.0 <= rep.statistic <= 1.0


class TestReport:
    def test_row(self):
        rep = OracleReport("epl", 0.1, 0.2, True, 10, 7)
        assert rep.row() == ("epl", "0.10000000000000001", "0.20000000000000001", 1, 10, 7)
        assert rep.asdict()["check"] == "epl"
