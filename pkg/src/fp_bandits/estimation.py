"""Regularized GLM maximum likelihood, Gram matrices and confidence widths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fp_bandits import linalg
from fp_bandits.links import LinkKind, LinkSpec, log_partition, mu, mu_dot

GRAD_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 20
REUSE_HESSIAN_BELOW = 1e-2
# a reused Hessian is kept only while each step shrinks the gradient at least this much
REUSE_CONTRACTION = 0.1
# substitute for ||theta_hat|| when it vanishes (no data yet)
THETA_NORM_FLOOR = 1e-6


class NoConvergence(RuntimeError):
    def __init__(self, grad_norm: float, iterations: int):
        super().__init__(f"IRLS stopped after {iterations} iterations, |grad| = {grad_norm:.3e}")
        self.grad_norm = grad_norm
        self.iterations = iterations


class InvalidDelta(ValueError):
    pass


class History:
    """Append-only record of (feature, reward) pairs with running sufficient statistics.

    Keeps ``sum x x^T`` and ``sum r x`` up to date on every append so the
    linear closed form and the vanilla Gram matrix cost O(d^2) per round.
    """

    def __init__(self, d: int, capacity: int = 64):
        self.d = int(d)
        self._X = np.empty((max(capacity, 1), self.d))
        self._r = np.empty(max(capacity, 1))
        self._n = 0
        self.gram = np.zeros((self.d, self.d))
        self.xr = np.zeros(self.d)
        self.abs_r_norm_sum = 0.0
        self.norm_sum = 0.0

    def __len__(self) -> int:
        return self._n

    @property
    def X(self) -> np.ndarray:
        return self._X[: self._n]

    @property
    def r(self) -> np.ndarray:
        return self._r[: self._n]

    def append(self, x, r: float) -> None:
        x = np.asarray(x, dtype=float)
        if self._n == self._X.shape[0]:
            self._X = np.concatenate([self._X, np.empty_like(self._X)])
            self._r = np.concatenate([self._r, np.empty_like(self._r)])
        self._X[self._n] = x
        self._r[self._n] = r
        self._n += 1
        self.gram = linalg.rank1_update(self.gram, x, 1.0)
        self.xr = self.xr + r * x
        nx = float(np.sqrt(x @ x))
        self.abs_r_norm_sum += abs(r) * nx
        self.norm_sum += nx

    @classmethod
    def from_pairs(cls, pairs, d: int | None = None) -> "History":
        pairs = list(pairs)
        if d is None:
            d = len(pairs[0][0])
        h = cls(d, capacity=max(len(pairs), 1))
        for x, r in pairs:
            h.append(x, r)
        return h

    def loss_lipschitz_bound(self, reward_bound: float) -> float:
        """``sum_tau (|r_tau| + R) ||x_tau||``, an upper bound on ``max ||grad L_t||``."""
        return self.abs_r_norm_sum + reward_bound * self.norm_sum


@dataclass
class EstimatorState:
    theta_hat: np.ndarray
    H_hat: np.ndarray
    V: np.ndarray
    b: np.ndarray
    t: int
    lam: float
    history: History
    converged: bool = True
    grad_norm: float = 0.0
    iterations: int = 0
    clipped: bool = False
    theta_raw: np.ndarray | None = None
    predictor: np.ndarray | None = field(default=None, repr=False)
    # unfloored Newton Hessian from the last IRLS iteration and the rows it covers
    newton_hessian: tuple[np.ndarray, int] | None = field(default=None, repr=False)
    _chol: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def theta_norm(self) -> float:
        return max(float(np.linalg.norm(self.theta_hat)), THETA_NORM_FLOOR)

    def _inv_factor(self, which: str) -> np.ndarray:
        # L^{-1} for G = L L^T, so ||x||_{G^{-1}} = ||L^{-1} x||
        if which not in self._chol:
            A = self.H_hat if which == "H" else self.V
            self._chol[which] = linalg.inv_cholesky(A)
        return self._chol[which]

    def widths(self, X, gram: str = "H") -> np.ndarray:
        """``||x_i||_{G^{-1}}`` for each row, with ``G`` the weighted (``"H"``) or vanilla (``"V"``) Gram."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = X @ self._inv_factor(gram).T
        return np.sqrt(np.einsum("ij,ij->i", Z, Z))


def neg_log_likelihood(link: LinkSpec, history: History, theta, rewards=None) -> float:
    """Unregularized GLM negative log-likelihood ``sum g(x^T theta) - r x^T theta``."""
    if len(history) == 0:
        return 0.0
    r = history.r if rewards is None else np.asarray(rewards, dtype=float)
    z = history.X @ np.asarray(theta, dtype=float)
    return float(np.sum(log_partition(link, z)) - r @ z)


def _regularized(link, r, lam, theta, z):
    return float(np.sum(log_partition(link, z)) - r @ z + 0.5 * lam * (theta @ theta))


def _phi(m: float) -> float:
    """``(e^m - m - 1) / m^2``, the self-concordant curvature inflation over a move of size ``m``."""
    if m < 1e-4:
        return 0.5 + m / 6.0
    if m > 700.0:
        return math.inf
    return math.expm1(m) / (m * m) - 1.0 / m


def _mean(link, z):
    # tanh form of the sigmoid: about twice as fast as expit, and the gradient
    # only needs absolute accuracy
    if link.kind is LinkKind.LOGISTIC:
        return 0.5 + 0.5 * np.tanh(0.5 * z)
    return mu(link, z)


def _weights(link, mean, z):
    if link.kind is LinkKind.LOGISTIC:
        return mean * (1.0 - mean)
    if link.kind is LinkKind.POISSON:
        return mean
    return mu_dot(link, z, clamp=False)


def _irls(link, X, r, lam, theta, tol, max_iter, H0=None):
    """Damped Newton on the regularized loss; returns ``(theta, z, |grad|, iterations, converged, H)``.

    For links with ``|mu''| <= mu'`` (logistic, Poisson) the slope can grow by
    at most ``e^m`` over a move of ``m = max_i |x_i^T s|``, which bounds the
    loss change of a step ``s`` by ``-g^T s + phi(m) sum_i w_i (x_i^T s)^2 +
    lam/2 |s|^2``. A step whose bound is negative is accepted without touching
    the loss; otherwise the loss is evaluated and the step halved as usual.

    ``H0`` is an approximate Hessian to start from (typically the previous
    fit's, extended by the new rows). It is rebuilt as soon as the gradient
    stops contracting quickly, so it only affects speed, not the answer.
    """
    d = X.shape[1]
    eye = np.eye(d)
    z = X @ theta
    safe_links = link.self_concordance <= 1.0
    f = None
    it = 0
    H = H0
    L = None if H0 is None else linalg.cholesky(H0)
    last_move = 0.0 if H0 is not None else np.inf
    prev_gnorm = np.inf
    while True:
        mean = _mean(link, z)
        grad = X.T @ (mean - r) + lam * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol or it >= max_iter:
            return theta, z, gnorm, it, gnorm <= tol, H
        w = _weights(link, mean, z)
        if L is None or last_move > REUSE_HESSIAN_BELOW or gnorm > REUSE_CONTRACTION * prev_gnorm:
            H = (X * w[:, None]).T @ X + lam * eye
            L = linalg.cholesky(H)
        prev_gnorm = gnorm
        step = linalg.cho_solve(L, grad)
        Xs = X @ step
        last_move = float(np.max(np.abs(Xs))) if Xs.size else 0.0
        certified = False
        if safe_links:
            gs = float(grad @ step)
            curv = _phi(last_move) * float(w @ (Xs * Xs)) + 0.5 * lam * float(step @ step)
            certified = curv < gs * (1.0 - 1e-12)
        if certified:
            theta, z = theta - step, z - Xs
            f = None
        else:
            if f is None:
                f = _regularized(link, r, lam, theta, z)
            slack = 1e-12 * max(1.0, abs(f))
            s = 1.0
            for _ in range(MAX_HALVINGS + 1):
                cand = theta - s * step
                zc = z - s * Xs
                fc = _regularized(link, r, lam, cand, zc)
                if fc <= f + slack:
                    break
                s *= 0.5
            theta, z, f = cand, zc, fc
            last_move *= s
        it += 1


def fit_mle(
    link: LinkSpec,
    history: History,
    lam: float,
    warm_start=None,
    *,
    rewards=None,
    theta_bound: float | None = None,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
    strict: bool = False,
    hessian_hint: tuple[np.ndarray, int] | None = None,
) -> EstimatorState:
    """Minimize ``L_t(theta) + lam/2 ||theta||^2`` and assemble the Gram matrices.

    The linear link uses the ridge closed form; other links run damped Newton
    (IRLS) from ``warm_start``. ``rewards`` substitutes pseudo-rewards for the
    recorded ones (used by reward-perturbing policies). A non-converged fit
    keeps the last iterate and reports it through ``converged``/``grad_norm``;
    pass ``strict=True`` to raise NoConvergence instead.

    ``theta_bound`` rescales the estimate onto ``||theta|| <= theta_bound`` when
    exceeded; the unclipped minimizer is kept in ``theta_raw`` for warm starts.
    ``hessian_hint`` is a previous state's ``newton_hessian``; it seeds the
    first Newton step and is rebuilt if it stops paying off.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    d = history.d
    V = history.gram + lam * np.eye(d)
    if rewards is None:
        r = history.r
        b = history.xr.copy()
    else:
        r = np.asarray(rewards, dtype=float)
        b = history.X.T @ r if len(history) else np.zeros(d)

    z = None
    newton_H = None
    if len(history) == 0:
        theta, gnorm, iters, ok = np.zeros(d), 0.0, 0, True
    elif link.is_linear:
        theta = linalg.solve_spd(V, b)
        gnorm = float(np.linalg.norm(V @ theta - b))
        iters, ok = 0, True
    else:
        theta0 = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=float)
        H0 = None
        if hessian_hint is not None and hessian_hint[1] <= len(history):
            Hp, n = hessian_hint
            Xn = history.X[n:]
            zn = Xn @ theta0
            wn = _weights(link, _mean(link, zn), zn)
            H0 = Hp + (Xn * wn[:, None]).T @ Xn
        theta, z, gnorm, iters, ok, newton_H = _irls(link, history.X, r, lam, theta0, tol, max_iter, H0)
        if not ok and strict:
            raise NoConvergence(gnorm, iters)

    raw = theta
    clipped = False
    if theta_bound is not None:
        nrm = float(np.linalg.norm(theta))
        if nrm > theta_bound:
            theta = theta * (theta_bound / nrm)
            clipped = True

    if link.is_linear or len(history) == 0:
        H = V.copy()
    elif link.kind is LinkKind.LOGISTIC and link.derivative_floor >= 0.25:
        # the floor dominates the logistic slope everywhere
        H = link.derivative_floor * history.gram + lam * np.eye(d)
    else:
        X = history.X
        zt = z if (z is not None and not clipped) else X @ theta
        w = mu_dot(link, zt)
        H = (X * w[:, None]).T @ X + lam * np.eye(d)
        H = 0.5 * (H + H.T)
    return EstimatorState(
        theta_hat=theta,
        H_hat=H,
        V=V,
        b=b,
        t=len(history) + 1,
        lam=float(lam),
        history=history,
        converged=ok,
        grad_norm=gnorm,
        iterations=iters,
        clipped=clipped,
        theta_raw=raw,
        predictor=z,
        newton_hessian=None if newton_H is None else (newton_H, len(history)),
    )


def regularized_gradient(link: LinkSpec, history: History, lam: float, theta, rewards=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if len(history) == 0:
        return lam * theta
    r = history.r if rewards is None else np.asarray(rewards, dtype=float)
    X = history.X
    return X.T @ (mu(link, X @ theta) - r) + lam * theta


@dataclass(frozen=True)
class ConfidenceParams:
    """Inputs of the likelihood-ratio confidence radius.

    ``horizon`` fixes the union-bound level ``delta' = delta / (4 T)``.
    """

    delta: float
    horizon: int
    M_mu: float
    d: int
    lam: float
    loss_bound: float = 0.0
    c: float = 2.0
    c_prime: float = 2.0

    @property
    def delta_prime(self) -> float:
        return self.delta / (4 * self.horizon)

    def at(self, loss_bound: float) -> "ConfidenceParams":
        return ConfidenceParams(self.delta, self.horizon, self.M_mu, self.d, self.lam,
                                float(loss_bound), self.c, self.c_prime)


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")


def beta(params: ConfidenceParams, delta: float | None = None) -> float:
    """Radius of the confidence ellipsoid ``||theta - theta_hat||_{H_hat} <= beta``.

    The log-volume term is floored at zero: before any data the loss bound is 0
    and ``log(2e L / d)`` would be unbounded below.
    """
    delta = params.delta if delta is None else delta
    _check_delta(delta)
    vol = math.log(max(2.0 * math.e * params.loss_bound / params.d, 1.0))
    inner = 4.0 * params.lam + 2.0 * (1.0 + params.M_mu) * (math.log(1.0 / delta) + params.d * vol)
    return math.sqrt(inner)


def tail_multiplier(delta: float, c: float = 2.0, c_prime: float = 2.0) -> float:
    """``sqrt(c log(c'/delta))``, the perturbation's concentration width at level ``delta``."""
    _check_delta(delta)
    return math.sqrt(c * math.log(c_prime / delta))


def gamma(params: ConfidenceParams, delta: float | None = None) -> float:
    """Concentration width of the perturbed score: ``beta(delta') * sqrt(c log(c'/delta'))``.

    ``delta' = delta / (4T)`` enters both factors, i.e. the multiplier is
    ``sqrt(c log(4 c' T / delta))``.
    """
    delta = params.delta if delta is None else delta
    _check_delta(delta)
    dp = delta / (4 * params.horizon)
    return beta(params, dp) * tail_multiplier(dp, params.c, params.c_prime)
