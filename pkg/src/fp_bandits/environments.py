"""Synthetic GLM bandit instances, reward oracle and regret bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from fp_bandits import rng as rngs
from fp_bandits.links import LinkKind, LinkSpec, linear_link, mu, mu_dot, sample_reward


CONTEXT_BLOCK = 128


class ContextMode(str, Enum):
    FIXED = "fixed"  # one arm set reused every round
    FRESH = "fresh"  # K new arms every round


@dataclass(frozen=True)
class EnvConfig:
    link: LinkSpec = field(default_factory=linear_link)
    d: int = 10
    K: int = 50
    T: int = 1000
    context_mode: ContextMode = ContextMode.FRESH
    S: float = 1.0
    noise_sigma: float = 1.0
    seed: int = 0
    unit_sphere: bool = False

    def __post_init__(self):
        object.__setattr__(self, "context_mode", ContextMode(self.context_mode))
        if self.K < 2 or self.d < 1 or self.T < 1 or self.S <= 0:
            raise ValueError("EnvConfig needs K >= 2, d >= 1, T >= 1, S > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def _normalize_rows(H: np.ndarray, unit_sphere: bool) -> np.ndarray:
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    if unit_sphere:
        return H / norms
    return H / np.maximum(1.0, norms)


class Environment:
    """A bandit instance: hidden ``theta_star`` plus a deterministic context stream.

    Contexts are drawn in blocks of CONTEXT_BLOCK rounds, each block from its
    own counter-keyed stream, so any round can be regenerated without
    replaying the whole run.
    """

    def __init__(self, cfg: EnvConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.theta_star, self._fixed = gen_instance(cfg, self.seed)
        self._block_id = -1
        self._block = None

    @property
    def d(self) -> int:
        return self.cfg.d

    @property
    def link(self) -> LinkSpec:
        return self.cfg.link

    def action_set(self, t: int) -> np.ndarray:
        if self._fixed is not None:
            return self._fixed
        block, offset = divmod(int(t) - 1, CONTEXT_BLOCK)
        if block != self._block_id:
            g = rngs.stream(self.seed, rngs.INSTANCE, block + 1)
            H = g.standard_normal((CONTEXT_BLOCK * self.cfg.K, self.cfg.d))
            self._block = _normalize_rows(H, self.cfg.unit_sphere).reshape(CONTEXT_BLOCK, self.cfg.K, self.cfg.d)
            self._block_id = block
        return self._block[offset]

    def expected_rewards(self, X: np.ndarray) -> np.ndarray:
        return mu(self.link, X @ self.theta_star)

    def step(self, X: np.ndarray, chosen: int, rng: np.random.Generator) -> float:
        z = float(X[chosen] @ self.theta_star)
        return sample_reward(self.link, z, rng, sigma=self.cfg.noise_sigma)

    def regret_of(self, X: np.ndarray, chosen: int) -> float:
        m = self.expected_rewards(X)
        return max(0.0, float(m.max() - m[chosen]))

    def optimal_arm(self, X: np.ndarray) -> int:
        return int(np.argmax(self.expected_rewards(X)))


def gen_instance(cfg: EnvConfig, seed: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Draw ``theta_star`` with norm exactly ``S`` and, in fixed mode, the shared arm set."""
    g = rngs.stream(seed, rngs.INSTANCE)
    v = g.standard_normal(cfg.d)
    theta = cfg.S * v / np.linalg.norm(v)
    fixed = None
    if cfg.context_mode is ContextMode.FIXED:
        fixed = _normalize_rows(g.standard_normal((cfg.K, cfg.d)), cfg.unit_sphere)
    return theta, fixed


class RegretTrace:
    """Per-round record of one run.

    ``width_h``/``width_v`` are ``||x_t||`` in the inverse weighted and vanilla
    Gram metrics before the update (NaN when diagnostics are off);
    ``opt_mu_dot`` is the link slope at the optimal arm.
    """

    columns = ("t", "chosen", "inst_regret", "cum_regret", "width_h", "width_v", "opt_mu_dot")

    def __init__(self, T: int = 0):
        self._rows: list[tuple] = []
        self._cum = 0.0

    def __len__(self) -> int:
        return len(self._rows)

    def record(self, t: int, chosen: int, regret: float, width_h=np.nan, width_v=np.nan,
               opt_mu_dot=np.nan) -> None:
        if regret < 0:
            raise ValueError("instantaneous regret must be nonnegative")
        self._cum += regret
        self._rows.append((int(t), int(chosen), float(regret), self._cum,
                           float(width_h), float(width_v), float(opt_mu_dot)))

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([row[i] for row in self._rows])

    @property
    def cum_regret(self) -> np.ndarray:
        return self.column("cum_regret")

    @property
    def final_regret(self) -> float:
        return self._cum

    def kappa_star_running(self) -> np.ndarray:
        k = self.column("opt_mu_dot")
        if k.size == 0:
            return k
        return np.cumsum(k) / np.arange(1, k.size + 1)

    def rows(self):
        return iter(self._rows)


def instance_constants(env: Environment, trace: RegretTrace, theta_hat=None) -> tuple[float, float]:
    """Empirical ``(kappa_star, kappa)`` of a completed run.

    ``kappa_star`` averages the link slope at each round's optimal arm.
    ``kappa`` is the minimum slope over every presented arm at ``theta_star``
    and ``theta_hat`` -- a finite proxy (a lower bound would need the whole
    parameter set).
    """
    link = env.link
    if link.kind is LinkKind.LINEAR:
        return 1.0, 1.0
    T = len(trace)
    if T == 0:
        return float("nan"), float("nan")
    thetas = [env.theta_star] if theta_hat is None else [env.theta_star, np.asarray(theta_hat)]
    ts = trace.column("t").astype(int)
    kstar = []
    kmin = np.inf
    for t in ts if env._fixed is None else ts[:1]:
        X = env.action_set(int(t))
        z = X @ env.theta_star
        kstar.append(mu_dot(link, z[np.argmax(z)], clamp=False))
        for th in thetas:
            kmin = min(kmin, float(np.min(mu_dot(link, X @ th, clamp=False))))
    kappa_star = float(np.mean(kstar))
    return kappa_star, float(kmin)
