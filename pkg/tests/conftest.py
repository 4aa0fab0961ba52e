import sys

import numpy as np
import pytest
from hypothesis import settings
from scipy import stats

from panelqlm.likelihood import Theta, phi_matrix

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


def simulate_from_theta(theta: Theta, N: int, T: int, rng, y1_sd: float = 1.0) -> np.ndarray:
    """Panel whose likelihood residuals are exactly N(0, Phi(theta)) given y1.

    FE: ``y_t - y1 = rho (y_{t-1} - y1) + w_t``; RE:
    ``y_t = rho y_{t-1} + pi_tilde y1 + u_t``.
    """
    Phi = phi_matrix(theta, T)
    L = np.linalg.cholesky(Phi)
    u = rng.standard_normal((N, T - 1)) @ L.T
    y = np.empty((N, T))
    y1 = y1_sd * rng.standard_normal(N)
    y[:, 0] = y1
    if theta.pi_tilde is None:
        dev = np.zeros(N)
        for t in range(1, T):
            dev = theta.rho * dev + u[:, t - 1]
            y[:, t] = y1 + dev
    else:
        for t in range(1, T):
            y[:, t] = theta.rho * y[:, t - 1] + theta.pi_tilde * y1 + u[:, t - 1]
    return y


def random_theta(rng, model: str, T: int, tsh: bool = True) -> Theta:
    """Admissible structural parameters at a random interior point."""
    rho = rng.uniform(0.1, 0.95)
    k = 1 if tsh else T - 1
    zeta = rng.uniform(0.5, 2.0, size=k)
    sv = rng.uniform(0.0, 1.0)
    pi = rng.uniform(-0.5, 0.5) if model == "re" else None
    return Theta(rho, sv, zeta, pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_gradient(f, x, h=1e-3):
    """Five-point central differences."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


def dense_logpdf(e, Phi):
    return stats.multivariate_normal(mean=np.zeros(Phi.shape[0]), cov=Phi).logpdf(e).sum()


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run."""
    lines = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
