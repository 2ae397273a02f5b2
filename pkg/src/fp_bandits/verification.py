"""Monte-Carlo and closed-form oracles for the exploration and estimation claims.

These checks use only the perturbation, estimation and linalg layers (never
the policies), so a policy bug cannot hide an oracle bug. Every report
carries the seed and sample size needed to replay it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from fp_bandits import linalg
from fp_bandits import rng as rngs
from fp_bandits.environments import EnvConfig, Environment
from fp_bandits.estimation import ConfidenceParams, EstimatorState, History, beta, fit_mle
from fp_bandits.links import LinkKind, LinkSpec
from fp_bandits.perturbation import PerturbationScheme, draw_zeta, perturbation_scales, score_distribution_params

REPORT_HEADER = ("check", "statistic", "threshold", "passed", "n_samples", "seed")
_CHUNK = 200_000


@dataclass(frozen=True)
class OracleReport:
    check: str
    statistic: float
    threshold: float
    passed: bool
    n_samples: int
    seed: int | None = None

    def row(self) -> tuple:
        return (self.check, "%.17g" % self.statistic, "%.17g" % self.threshold,
                int(self.passed), self.n_samples, "" if self.seed is None else self.seed)

    def asdict(self) -> dict:
        return asdict(self)


def random_unit(d: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def _projections(scheme, d, n, u, rng):
    out = np.empty(n)
    for start in range(0, n, _CHUNK):
        m = min(_CHUNK, n - start)
        out[start:start + m] = draw_zeta(scheme, d, rng, size=m) @ u
    return out


def check_anti_concentration(scheme: PerturbationScheme, d: int, n_samples: int,
                             rng: np.random.Generator, u=None, seed: int | None = None) -> OracleReport:
    """Estimate ``P(u^T zeta >= 1)`` and compare with the scheme's lower bound ``p``.

    Passes when the estimate clears ``p - 3 sqrt(p (1 - p) / n)``.
    """
    u = random_unit(d, rng) if u is None else np.asarray(u, dtype=float) / np.linalg.norm(u)
    proj = _projections(scheme, d, n_samples, u, rng)
    est = float(np.mean(proj >= 1.0))
    p = scheme.anti_conc_p
    threshold = p - 3.0 * math.sqrt(p * (1.0 - p) / n_samples)
    return OracleReport("anti_concentration", est, threshold, est >= threshold, n_samples, seed)


def check_concentration(scheme: PerturbationScheme, delta: float, n_samples: int,
                        rng: np.random.Generator, d: int = 5, u=None,
                        seed: int | None = None) -> OracleReport:
    """Estimate the coverage of ``|u^T zeta| <= sqrt(c log(c'/delta))``.

    Passes when coverage is at least ``1 - delta - 3 sqrt(delta (1 - delta) / n)``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    u = random_unit(d, rng) if u is None else np.asarray(u, dtype=float) / np.linalg.norm(u)
    width = scheme.concentration_width(delta)
    proj = _projections(scheme, d, n_samples, u, rng)
    cover = float(np.mean(np.abs(proj) <= width))
    threshold = 1.0 - delta - 3.0 * math.sqrt(delta * (1.0 - delta) / n_samples)
    return OracleReport("concentration", cover, threshold, cover >= threshold, n_samples, seed)


def epl_bound(lam: float, d: int, T: int, R: float = 1.0) -> float:
    return 2.0 * d * math.log(1.0 + R * R * T / (d * lam))


def check_epl(widths_v, lam: float, d: int, T: int | None = None, seed: int | None = None) -> OracleReport:
    """Elliptical potential: ``sum_t min(1, ||x_t||^2_{V_t^{-1}}) <= 2 d log(1 + T / (d lam))``.

    ``widths_v`` holds ``||x_t||_{V_t^{-1}}`` per round (a RegretTrace is
    accepted too). The inequality is exact; no tolerance is applied.
    """
    if hasattr(widths_v, "column"):
        widths_v = widths_v.column("width_v")
    w = np.asarray(widths_v, dtype=float)
    T = w.size if T is None else int(T)
    stat = float(np.sum(np.minimum(1.0, w * w)))
    bound = epl_bound(lam, d, T) if T > 0 else 0.0
    return OracleReport("epl", stat, bound, stat <= bound, T, seed)


def fp_scores(x, state: EstimatorState, c_t: float, scheme: PerturbationScheme, n: int,
              rng: np.random.Generator, gram: str = "V") -> np.ndarray:
    """``n`` replays of the perturbed score ``(x + scale * zeta)^T theta_hat`` for one arm."""
    x = np.asarray(x, dtype=float)
    scale = perturbation_scales(x[None, :], state, c_t, gram)[0]
    zeta = draw_zeta(scheme, x.size, rng, size=n)
    return (x[None, :] + scale * zeta) @ state.theta_hat


def ts_scores(x, state: EstimatorState, c_t: float, n: int, rng: np.random.Generator,
              gram: str = "V") -> np.ndarray:
    """``n`` replays of ``x^T (theta_hat + c_t G^{-1/2} zeta)``."""
    x = np.asarray(x, dtype=float)
    G = state.V if gram == "V" else state.H_hat
    zeta = rng.standard_normal((n, x.size))
    theta = state.theta_hat[None, :] + c_t * zeta @ linalg.inv_sqrt(G)
    return theta @ x


def check_score_marginal(x, state: EstimatorState, c_t: float, n_samples: int,
                         rng: np.random.Generator, scheme: PerturbationScheme | None = None,
                         seed: int | None = None, ks_threshold: float = 0.01) -> OracleReport:
    """KS distance of the FP and TS score replays from the closed-form Gaussian.

    The statistic is the larger of the two KS distances. With ``c_t = 0`` both
    replays must equal the mean exactly.
    """
    scheme = scheme or PerturbationScheme()
    mean, std = score_distribution_params(x, state, c_t, gram="V")
    fp = fp_scores(x, state, c_t, scheme, n_samples, rng)
    ts = ts_scores(x, state, c_t, n_samples, rng)
    if std == 0.0:
        stat = float(max(np.max(np.abs(fp - mean)), np.max(np.abs(ts - mean))))
        return OracleReport("score_marginal", stat, 0.0, stat == 0.0, n_samples, seed)
    dist = stats.norm(loc=mean, scale=std)
    ks = max(stats.kstest(fp, dist.cdf).statistic, stats.kstest(ts, dist.cdf).statistic)
    return OracleReport("score_marginal", float(ks), ks_threshold, ks < ks_threshold, n_samples, seed)


def confidence_distance(state: EstimatorState, theta_star) -> float:
    diff = state.theta_hat - np.asarray(theta_star, dtype=float)
    return float(np.sqrt(diff @ state.H_hat @ diff))


def check_beta_coverage(link: LinkSpec, cfg: EnvConfig, n_runs: int, seed: int = 0,
                        delta: float = 0.1, lam: float = 1.0,
                        reward_bound: float | None = None) -> OracleReport:
    """Fraction of uniform-logging runs with ``||theta_hat_T - theta_star||_{H_T} > beta_T(delta)``.

    Run ``i`` uses seed ``seed + i``. Passes when the fraction is at most ``delta``.
    """
    if cfg.link != link:
        cfg = EnvConfig(link=link, d=cfg.d, K=cfg.K, T=cfg.T, context_mode=cfg.context_mode,
                        S=cfg.S, noise_sigma=cfg.noise_sigma, unit_sphere=cfg.unit_sphere)
    if reward_bound is None:
        reward_bound = 1.0 if link.kind is LinkKind.LOGISTIC else cfg.S
    exceed = 0
    for i in range(n_runs):
        s = seed + i
        env = Environment(cfg, seed=s)
        pick = rngs.stream(s, rngs.POLICY_NOISE)
        noise = rngs.stream(s, rngs.REWARD_NOISE)
        hist = History(cfg.d, capacity=cfg.T)
        for t in range(1, cfg.T + 1):
            X = env.action_set(t)
            a = int(pick.integers(X.shape[0]))
            hist.append(X[a], env.step(X, a, noise))
        est = fit_mle(link, hist, lam)
        params = ConfidenceParams(delta, cfg.T, link.self_concordance, cfg.d, lam,
                                  hist.loss_lipschitz_bound(reward_bound))
        if confidence_distance(est, env.theta_star) > beta(params):
            exceed += 1
    frac = exceed / n_runs
    return OracleReport("beta_coverage", frac, delta, frac <= delta, n_runs, seed)
