"""Arm-selection policies: feature perturbation (GLM-FP / LinFP) and the baselines.

Every policy follows the same loop: ``select`` scores the round's arms from
the current fit, ``update`` records the observed reward and refits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from fp_bandits import linalg
from fp_bandits.estimation import ConfidenceParams, EstimatorState, History, beta, fit_mle
from fp_bandits.links import LinkKind, LinkSpec, linear_link, mu
from fp_bandits.perturbation import PerturbationScheme, draw_zeta, perturb_features


class Algorithm(str, Enum):
    FP = "fp"
    EPS_GREEDY = "eps_greedy"
    UCB = "ucb"
    TS = "ts"
    PHE = "phe"
    RAND_UCB = "rand_ucb"


class CtMode(str, Enum):
    THEORY = "theory"
    FIXED = "fixed"


_LABELS = {
    Algorithm.FP: ("LinFP", "GLM-FP"),
    Algorithm.EPS_GREEDY: ("EpsGreedy", "EpsGreedy"),
    Algorithm.UCB: ("LinUCB", "GLM-UCB"),
    Algorithm.TS: ("LinTS", "GLM-TS"),
    Algorithm.PHE: ("LinPHE", "GLM-PHE"),
    Algorithm.RAND_UCB: ("RandLinUCB", "RandUCB"),
}


@dataclass(frozen=True)
class PolicyConfig:
    """Algorithm choice and tuning scalars; fields that do not apply are ignored.

    ``delta=None`` means ``1/T``. ``reward_bound=None`` means 1 for bounded links
    and ``theta_bound`` (or 1) for the linear link. ``rand_ucb_z="projected"``
    makes RandUCB derive its scalar from a full perturbation vector projected on
    the estimate direction, so it can be replayed in lockstep with FP.
    """

    algorithm: Algorithm = Algorithm.FP
    link: LinkSpec = field(default_factory=linear_link)
    lam: float = 1.0
    c_t_mode: CtMode = CtMode.FIXED
    c_t_value: float = 1.0
    delta: float | None = None
    epsilon0: float = 0.05
    phe_scale: float = 1.0
    scheme: PerturbationScheme = field(default_factory=PerturbationScheme)
    theta_bound: float | None = None
    reward_bound: float | None = None
    rand_ucb_z: str = "scalar"
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "c_t_mode", CtMode(self.c_t_mode))
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.rand_ucb_z not in ("scalar", "projected"):
            raise ValueError("rand_ucb_z must be 'scalar' or 'projected'")
        if self.epsilon0 < 0 or self.phe_scale < 0 or self.c_t_value < 0:
            raise ValueError("exploration scalars must be nonnegative")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        lin, glm = _LABELS[self.algorithm]
        return lin if self.link.is_linear else glm

    def with_(self, **changes) -> "PolicyConfig":
        return replace(self, **changes)


@dataclass
class PolicyState:
    estimator: EstimatorState
    t: int
    rng: np.random.Generator
    diagnostics: dict = field(default_factory=dict)


class Policy:
    """One policy instance driving one simulation run."""

    def __init__(self, config: PolicyConfig, d: int, horizon: int, rng: np.random.Generator):
        self.config = config
        self.d = int(d)
        self.horizon = int(horizon)
        self.delta = config.delta if config.delta is not None else 1.0 / max(horizon, 2)
        if config.reward_bound is not None:
            self.reward_bound = config.reward_bound
        elif config.link.kind is LinkKind.LOGISTIC:
            self.reward_bound = 1.0
        else:
            self.reward_bound = config.theta_bound if config.theta_bound is not None else 1.0
        history = History(d, capacity=min(max(horizon, 1), 1 << 16))
        est = fit_mle(config.link, history, config.lam)
        self.state = PolicyState(est, 1, rng, {"no_convergence": 0, "clipped": 0})
        self._select = _SELECTORS[config.algorithm]

    @property
    def estimator(self) -> EstimatorState:
        return self.state.estimator

    @property
    def t(self) -> int:
        return self.state.t

    @property
    def rng(self) -> np.random.Generator:
        return self.state.rng

    def confidence(self) -> ConfidenceParams:
        est = self.estimator
        return ConfidenceParams(
            delta=self.delta,
            horizon=self.horizon,
            M_mu=self.config.link.self_concordance,
            d=self.d,
            lam=self.config.lam,
            loss_bound=est.history.loss_lipschitz_bound(self.reward_bound),
        )

    def c_t(self) -> float:
        if self.config.c_t_mode is CtMode.FIXED:
            return self.config.c_t_value
        params = self.confidence()
        return beta(params, params.delta_prime)

    def select(self, X) -> int:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        arm = int(self._select(X, self))
        self.state.diagnostics["last_arm"] = arm
        return arm

    def refit(self) -> None:
        cfg = self.config
        prev = self.estimator
        est = fit_mle(cfg.link, prev.history, cfg.lam, warm_start=prev.theta_raw,
                      theta_bound=cfg.theta_bound, hessian_hint=prev.newton_hessian)
        if not est.converged:
            self.state.diagnostics["no_convergence"] += 1
        if est.clipped:
            self.state.diagnostics["clipped"] += 1
        self.state.estimator = est

    def update(self, x, reward: float) -> None:
        self.estimator.history.append(x, reward)
        self.refit()
        self.state.t += 1


def _greedy(X, policy: Policy, theta=None) -> int:
    theta = policy.estimator.theta_hat if theta is None else theta
    return int(np.argmax(mu(policy.config.link, X @ theta)))


def _fp(X, policy: Policy, gram: str) -> int:
    cfg = policy.config
    est = policy.estimator
    c_t = policy.c_t()
    Xp = perturb_features(X, est, c_t, cfg.scheme, policy.rng, gram=gram)
    scores = mu(cfg.link, Xp @ est.theta_hat)
    policy.state.diagnostics["scores"] = scores
    return int(np.argmax(scores))


def select_fp(X, policy: Policy) -> int:
    """Coupled feature perturbation scored through the link; dispatches to LinFP for the linear link."""
    if policy.config.link.is_linear:
        return select_lin_fp(X, policy)
    return _fp(X, policy, "H")


def select_lin_fp(X, policy: Policy) -> int:
    if not policy.config.link.is_linear:
        raise ValueError("LinFP requires the linear link")
    return _fp(X, policy, "V")


def select_eps_greedy(X, policy: Policy) -> int:
    eps = min(1.0, policy.config.epsilon0 * math.sqrt(policy.horizon / policy.t))
    rng = policy.rng
    if rng.random() < eps:
        return int(rng.integers(X.shape[0]))
    return _greedy(X, policy)


def select_ucb(X, policy: Policy) -> int:
    est = policy.estimator
    width = beta(policy.confidence()) * est.widths(X, "H")
    scores = mu(policy.config.link, X @ est.theta_hat + width)
    policy.state.diagnostics["scores"] = scores
    return int(np.argmax(scores))


def select_ts(X, policy: Policy) -> int:
    est = policy.estimator
    G = est.V if policy.config.link.is_linear else est.H_hat
    zeta = policy.rng.standard_normal(policy.d)
    theta = est.theta_hat + policy.c_t() * (linalg.inv_sqrt(G) @ zeta)
    return _greedy(X, policy, theta)


def select_phe(X, policy: Policy) -> int:
    cfg = policy.config
    est = policy.estimator
    hist = est.history
    if len(hist) == 0:
        return _greedy(X, policy)
    noise = cfg.phe_scale * policy.rng.standard_normal(len(hist))
    if cfg.link.is_linear:
        theta = linalg.solve_spd(est.V, est.b + hist.X.T @ noise)
    else:
        pseudo = fit_mle(cfg.link, hist, cfg.lam, warm_start=est.theta_raw,
                         rewards=hist.r + noise, theta_bound=cfg.theta_bound,
                         hessian_hint=est.newton_hessian)
        if not pseudo.converged:
            policy.state.diagnostics["no_convergence"] += 1
        theta = pseudo.theta_hat
    return _greedy(X, policy, theta)


def select_rand_ucb(X, policy: Policy) -> int:
    cfg = policy.config
    est = policy.estimator
    if cfg.rand_ucb_z == "projected":
        zeta = draw_zeta(cfg.scheme, policy.d, policy.rng)
        z = float(zeta @ est.theta_hat) / est.theta_norm
    else:
        z = float(policy.rng.standard_normal())
    bonus = policy.c_t() * z * est.widths(X, "V")
    scores = mu(cfg.link, X @ est.theta_hat + bonus)
    policy.state.diagnostics["scores"] = scores
    return int(np.argmax(scores))


_SELECTORS = {
    Algorithm.FP: select_fp,
    Algorithm.EPS_GREEDY: select_eps_greedy,
    Algorithm.UCB: select_ucb,
    Algorithm.TS: select_ts,
    Algorithm.PHE: select_phe,
    Algorithm.RAND_UCB: select_rand_ucb,
}
