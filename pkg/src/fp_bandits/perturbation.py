"""Perturbing distributions and the feature-perturbation step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from fp_bandits.estimation import EstimatorState


class Distribution(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM_BALL = "uniform_ball"


class Coupling(str, Enum):
    COUPLED = "coupled"
    UNCOUPLED = "uncoupled"


GAUSSIAN_ANTI_CONC = 1.0 / (4.0 * math.sqrt(math.e * math.pi))
UNIFORM_BALL_ANTI_CONC = 1.0 / (16.0 * math.sqrt(3.0 * math.pi))


@dataclass(frozen=True)
class PerturbationScheme:
    distribution: Distribution = Distribution.GAUSSIAN
    coupling: Coupling = Coupling.COUPLED
    c_const: float = 2.0
    c_prime_const: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        object.__setattr__(self, "coupling", Coupling(self.coupling))

    @property
    def anti_conc_p(self) -> float:
        if self.distribution is Distribution.GAUSSIAN:
            return GAUSSIAN_ANTI_CONC
        return UNIFORM_BALL_ANTI_CONC

    def concentration_width(self, delta: float) -> float:
        """Width ``sqrt(c log(c'/delta))`` bounding ``|u^T zeta|`` with probability ``1 - delta``."""
        return math.sqrt(self.c_const * math.log(self.c_prime_const / delta))

    @classmethod
    def gaussian(cls, coupling: Coupling = Coupling.COUPLED) -> "PerturbationScheme":
        return cls(Distribution.GAUSSIAN, coupling)

    @classmethod
    def uniform_ball(cls, coupling: Coupling = Coupling.COUPLED) -> "PerturbationScheme":
        # (c, c') = (2, 2) is supported by simulation only for the ball
        return cls(Distribution.UNIFORM_BALL, coupling)


def draw_zeta(scheme: PerturbationScheme, d: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One perturbation vector (or ``size`` of them, stacked as rows)."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    n = 1 if size is None else int(size)
    if scheme.distribution is Distribution.GAUSSIAN:
        out = rng.standard_normal((n, d))
    else:
        # uniform on the radius-sqrt(d) ball: isotropic direction, radius with density ~ r^(d-1)
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radius = math.sqrt(d) * rng.random(n) ** (1.0 / d)
        out = g * radius[:, None]
    return out[0] if size is None else out


def perturbation_scales(X: np.ndarray, state: EstimatorState, c_t: float, gram: str = "H") -> np.ndarray:
    """Per-arm scale ``c_t ||x_i||_{G^{-1}} / ||theta_hat||``."""
    return c_t * state.widths(X, gram) / state.theta_norm


def perturb_features(
    X,
    state: EstimatorState,
    c_t: float,
    scheme: PerturbationScheme,
    rng: np.random.Generator,
    gram: str = "H",
    zeta=None,
) -> np.ndarray:
    """Return the ``(K, d)`` perturbed features ``x_i + scale_i * zeta``.

    Coupled schemes share one ``zeta`` across arms; uncoupled ones draw a
    fresh vector per arm. A fixed ``zeta`` (vector, or ``(K, d)`` matrix for
    uncoupled) can be supplied for replay.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    K, d = X.shape
    if c_t == 0:
        return X.copy()
    if zeta is None:
        if scheme.coupling is Coupling.COUPLED:
            zeta = draw_zeta(scheme, d, rng)
        else:
            zeta = draw_zeta(scheme, d, rng, size=K)
    scales = perturbation_scales(X, state, c_t, gram)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim == 1:
        return X + scales[:, None] * zeta[None, :]
    return X + scales[:, None] * zeta


def score_distribution_params(x, state: EstimatorState, c_t: float, gram: str = "V") -> tuple[float, float]:
    """Mean and standard deviation of the Gaussian score ``x^T theta_hat + c_t ||x||_{G^{-1}} z``.

    ``gram="V"`` is the linear case; pass ``"H"`` for the weighted Gram of a GLM fit.
    """
    x = np.asarray(x, dtype=float)
    mean = float(x @ state.theta_hat)
    std = float(c_t * state.widths(x[None, :], gram)[0])
    return mean, std
