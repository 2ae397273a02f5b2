import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_spd(rng, d, lam=0.5):
    A = rng.standard_normal((d + 3, d))
    return lam * np.eye(d) + A.T @ A


def make_state(theta, H=None, V=None, lam=1.0):
    """Hand-built estimator state for selection tests."""
    from fp_bandits.estimation import EstimatorState, History

    theta = np.asarray(theta, dtype=float)
    d = theta.size
    H = np.eye(d) if H is None else np.asarray(H, dtype=float)
    V = H.copy() if V is None else np.asarray(V, dtype=float)
    return EstimatorState(theta_hat=theta, H_hat=H, V=V, b=V @ theta, t=1, lam=lam,
                          history=History(d), theta_raw=theta.copy())
