"""Feature-perturbation exploration for generalized linear contextual bandits."""

from fp_bandits.links import LinkSpec, linear_link, logistic_link, poisson_link
from fp_bandits.estimation import EstimatorState, History, fit_mle
from fp_bandits.perturbation import PerturbationScheme
from fp_bandits.policies import Policy, PolicyConfig
from fp_bandits.environments import EnvConfig, Environment, RegretTrace

__all__ = [
    "EnvConfig",
    "Environment",
    "EstimatorState",
    "History",
    "LinkSpec",
    "PerturbationScheme",
    "Policy",
    "PolicyConfig",
    "RegretTrace",
    "fit_mle",
    "linear_link",
    "logistic_link",
    "poisson_link",
]

__version__ = "0.1.0"
