"""Built-in experiment presets mirroring the published synthetic GLB settings.

Full presets use the published horizons and run counts; ``desk`` variants
shrink the horizon and runs so the acceptance suite finishes on one core.
"""

from __future__ import annotations

from fp_bandits.environments import ContextMode, EnvConfig
from fp_bandits.harness import ExperimentConfig
from fp_bandits.links import LinkSpec, linear_link, logistic_link
from fp_bandits.policies import PolicyConfig

LAMBDA = 1e-4
EPSILON0 = 0.05


def baseline_suite(link: LinkSpec, T: int, theta_bound: float | None, reward_bound: float | None,
                   algorithms=("eps_greedy", "ucb", "ts", "phe", "rand_ucb", "fp")) -> list[PolicyConfig]:
    """Policies as tuned for the GLB experiments: c_t = 1, delta = 1/T, lambda = 1e-4."""
    common = dict(link=link, lam=LAMBDA, delta=1.0 / T, c_t_mode="fixed", c_t_value=1.0,
                  epsilon0=EPSILON0, theta_bound=theta_bound, reward_bound=reward_bound)
    return [PolicyConfig(algorithm=a, **common) for a in algorithms]


def _linear(d: int, K: int, T: int, S: float, runs: int, seed: int, algorithms=None) -> ExperimentConfig:
    link = linear_link()
    env = EnvConfig(link=link, d=d, K=K, T=T, context_mode=ContextMode.FRESH, S=S, noise_sigma=1.0)
    kw = {} if algorithms is None else {"algorithms": algorithms}
    return ExperimentConfig(env, baseline_suite(link, T, None, S, **kw), n_runs=runs, base_seed=seed)


def _logistic(d: int, K: int, T: int, S: float, runs: int, seed: int) -> ExperimentConfig:
    link = logistic_link(derivative_floor=0.25)
    env = EnvConfig(link=link, d=d, K=K, T=T, context_mode=ContextMode.FRESH, S=S, noise_sigma=0.0)
    return ExperimentConfig(env, baseline_suite(link, T, S, 1.0), n_runs=runs, base_seed=seed)


def linear_fig2(desk: bool = False, seed: int = 0) -> list[tuple[str, ExperimentConfig]]:
    if desk:
        return [("d10", _linear(10, 50, 5_000, 2.0, 50, seed))]
    return [(f"d{d}", _linear(d, 100, 20_000, 2.0, 100, seed)) for d in (10, 20, 40)]


def logistic_fig2(desk: bool = False, seed: int = 0) -> list[tuple[str, ExperimentConfig]]:
    if desk:
        return [("d10", _logistic(10, 50, 5_000, 4.0, 50, seed))]
    return [(f"d{d}", _logistic(d, 100, 10_000, 4.0, 100, seed)) for d in (10, 20, 40)]


def regret_vs_d_fig3b(desk: bool = False, seed: int = 0) -> list[tuple[str, ExperimentConfig]]:
    T, runs = (5_000, 50) if desk else (20_000, 50)
    return [(f"d{d}", _linear(d, 50, T, 2.0, runs, seed, algorithms=("ts", "fp"))) for d in (5, 10, 20)]


PRESETS = {
    "linear-fig2": linear_fig2,
    "logistic-fig2": logistic_fig2,
    "regret-vs-d-fig3b": regret_vs_d_fig3b,
}


def get_preset(name: str, desk: bool = False, seed: int = 0) -> list[tuple[str, ExperimentConfig]]:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(desk=desk, seed=seed)
