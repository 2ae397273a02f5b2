"""GLM link functions, their derivatives, and reward sampling.

Each link is the derivative of an exponential-family log-partition ``g``:
identity (Gaussian), sigmoid (Bernoulli) and exp (Poisson).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import expit

# exp overflows float64 just above this
_EXP_MAX = 709.0


class LinkKind(str, Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    POISSON = "poisson"


class LinkOverflow(OverflowError):
    """Poisson mean exp(z) is not representable."""


@dataclass(frozen=True)
class LinkSpec:
    kind: LinkKind
    lipschitz: float
    self_concordance: float
    derivative_floor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))
        if self.lipschitz <= 0:
            raise ValueError("lipschitz constant must be positive")
        if self.self_concordance < 0 or self.derivative_floor < 0:
            raise ValueError("self_concordance and derivative_floor must be nonnegative")

    @property
    def is_linear(self) -> bool:
        return self.kind is LinkKind.LINEAR

    def with_floor(self, floor: float) -> "LinkSpec":
        return replace(self, derivative_floor=float(floor))


def linear_link() -> LinkSpec:
    return LinkSpec(LinkKind.LINEAR, 1.0, 0.0)


def logistic_link(derivative_floor: float = 0.0) -> LinkSpec:
    return LinkSpec(LinkKind.LOGISTIC, 0.25, 1.0, derivative_floor)


def poisson_link() -> LinkSpec:
    # L = e presumes logits in [-1, 1]
    return LinkSpec(LinkKind.POISSON, float(np.e), 1.0)


def link_from_name(name: str, derivative_floor: float = 0.0) -> LinkSpec:
    kind = LinkKind(name.lower())
    if kind is LinkKind.LINEAR:
        return linear_link()
    if kind is LinkKind.LOGISTIC:
        return logistic_link(derivative_floor)
    return poisson_link().with_floor(derivative_floor)


def _exp_checked(z):
    if np.any(np.asarray(z) > _EXP_MAX):
        raise LinkOverflow("exp(z) exceeds the float64 range")
    return np.exp(z)


def mu(link: LinkSpec, z):
    """Mean reward at linear utility ``z``."""
    if link.kind is LinkKind.LINEAR:
        return np.asarray(z, dtype=float) if np.ndim(z) else float(z)
    if link.kind is LinkKind.LOGISTIC:
        return expit(z)
    return _exp_checked(z)


def mu_dot(link: LinkSpec, z, clamp: bool = True):
    """First derivative of the link; floored at ``derivative_floor`` when ``clamp``."""
    if link.kind is LinkKind.LINEAR:
        d = np.ones_like(np.asarray(z, dtype=float))
    elif link.kind is LinkKind.LOGISTIC:
        s = expit(z)
        d = s * (1.0 - s)
    else:
        d = _exp_checked(z)
    if clamp and link.derivative_floor > 0:
        d = np.maximum(d, link.derivative_floor)
    return d if np.ndim(d) else float(d)


def mu_ddot(link: LinkSpec, z):
    """Second derivative of the (unclamped) link."""
    if link.kind is LinkKind.LINEAR:
        d = np.zeros_like(np.asarray(z, dtype=float))
    elif link.kind is LinkKind.LOGISTIC:
        s = expit(z)
        d = s * (1.0 - s) * (1.0 - 2.0 * s)
    else:
        d = _exp_checked(z)
    return d if np.ndim(d) else float(d)


def log_partition(link: LinkSpec, z):
    """Antiderivative ``g`` of the link, so that ``g' = mu``."""
    z = np.asarray(z, dtype=float)
    if link.kind is LinkKind.LINEAR:
        return 0.5 * z * z
    if link.kind is LinkKind.LOGISTIC:
        # log(1 + e^z) without overflow
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return _exp_checked(z)


def sample_reward(link: LinkSpec, z: float, rng: np.random.Generator, sigma: float = 1.0) -> float:
    """Draw one reward with mean ``mu(z)`` from the link's exponential family."""
    if link.kind is LinkKind.LINEAR:
        if sigma == 0:
            return float(z)
        return float(z + sigma * rng.standard_normal())
    if link.kind is LinkKind.LOGISTIC:
        return float(rng.random() < expit(z))
    return float(rng.poisson(_exp_checked(z)))
