"""
Gaussian quasi-log-likelihoods for the panel AR(1) model.

Two likelihoods are covered, both conditional on the initial observation
``y_{i,1}``:

* fixed effects (FE): the residual ``w_i = (y_i - y_{i1}) - rho (y_{i,-1} - y_{i1})``
  is ``N(0, Phi)``;
* random effects (RE): ``u_i = y_i - rho y_{i,-1} - pi_tilde y_{i1}`` is
  ``N(0, Phi)``;

with ``Phi = sigma_v_sq * ii' + diag(zeta)`` of order T-1. ``zeta`` holds a
single variance when time-series homoskedasticity is imposed (``tsh``) and
T-1 variances otherwise.

Parameter vectors use the layout ``(rho, sigma_v_sq, zeta..., [pi_tilde])``
in structural coordinates and ``(r, sv, z..., [p])`` in the reparametrized
coordinates in which the information matrix is singular at the unit root;
see :func:`map_theta`.

All log-likelihoods, scores and observed Hessians are totals over
individuals. Expected Hessians, higher-order expected derivatives and OPG
matrices are per-observation averages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .matrixkit import diff_matrix, lag_filter

__all__ = [
    "InadmissibleParameterError",
    "Theta",
    "ThetaN",
    "ThetaRE",
    "ThetaFE",
    "theta_star",
    "map_theta",
    "unmap_theta",
    "map_jacobian",
    "phi_matrix",
    "loglik",
    "loglik_i",
    "loglik_fe",
    "loglik_re",
    "score",
    "score_fe",
    "observed_hessian",
    "loglik_n",
    "score_n",
    "observed_hessian_n",
    "second_derivative_r_i",
    "expected_loglik",
    "expected_taylor",
    "expected_score",
    "expected_hessian",
    "expected_hessian_structural",
    "expected_hessian_under",
    "score_quadratic_forms",
    "SingularPointDerivatives",
    "singular_derivatives",
    "opg",
    "LikelihoodEval",
    "evaluate",
    "panel_array",
]

LOG2PI = np.log(2.0 * np.pi)


class InadmissibleParameterError(ValueError):
    """Raised when a parameter value leaves the admissible region."""


# ---------------------------------------------------------------------------
# parameter containers

def _zeta_array(z) -> np.ndarray:
    return np.atleast_1d(np.asarray(z, dtype=float)).copy()


@dataclass(frozen=True)
class Theta:
    """Structural parameters ``(rho, sigma_v_sq, zeta, pi_tilde)``.

    ``pi_tilde`` is ``None`` for the FE likelihood.
    """

    rho: float
    sigma_v_sq: float
    zeta: np.ndarray
    pi_tilde: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "zeta", _zeta_array(self.zeta))

    @property
    def model(self) -> str:
        return "fe" if self.pi_tilde is None else "re"

    @property
    def tsh(self) -> bool:
        return self.zeta.size == 1

    @property
    def dim(self) -> int:
        return 2 + self.zeta.size + (self.pi_tilde is not None)

    def to_vector(self) -> np.ndarray:
        parts = [[self.rho, self.sigma_v_sq], self.zeta]
        if self.pi_tilde is not None:
            parts.append([self.pi_tilde])
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, v, model: str) -> "Theta":
        v = np.asarray(v, dtype=float)
        if model == "re":
            return cls(v[0], v[1], v[2:-1], v[-1])
        return cls(v[0], v[1], v[2:])

    def psi(self, T: int) -> np.ndarray:
        """Diagonal of the idiosyncratic covariance, length T-1."""
        if self.tsh:
            return np.full(T - 1, self.zeta[0])
        if self.zeta.size != T - 1:
            raise ValueError(f"zeta has {self.zeta.size} entries, need {T - 1}")
        return self.zeta


ThetaRE = Theta
ThetaFE = Theta


@dataclass(frozen=True)
class ThetaN:
    """Reparametrized coordinates ``(r, sv, z, p)``.

    ``r`` is the autoregressive coefficient, ``sv`` the shifted and rescaled
    effect variance, ``z`` the rescaled time variances and ``p`` the shifted
    initial-condition coefficient (RE only).
    """

    r: float
    sv: float
    z: np.ndarray
    p: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "z", _zeta_array(self.z))

    @property
    def model(self) -> str:
        return "fe" if self.p is None else "re"

    @property
    def tsh(self) -> bool:
        return self.z.size == 1

    @property
    def dim(self) -> int:
        return 2 + self.z.size + (self.p is not None)

    def to_vector(self) -> np.ndarray:
        parts = [[self.r, self.sv], self.z]
        if self.p is not None:
            parts.append([self.p])
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, v, model: str) -> "ThetaN":
        v = np.asarray(v, dtype=float)
        if model == "re":
            return cls(v[0], v[1], v[2:-1], v[-1])
        return cls(v[0], v[1], v[2:])

    def replace(self, **kw) -> "ThetaN":
        d = dict(r=self.r, sv=self.sv, z=self.z, p=self.p)
        d.update(kw)
        return ThetaN(**d)


def theta_star(T: int, sigma_sq: float = 1.0, model: str = "fe",
               tsh: bool = True) -> ThetaN:
    """The singular point: unit root, no effect variance, equal variances."""
    z = [sigma_sq] if tsh else [sigma_sq] * (T - 1)
    return ThetaN(1.0, 0.0, z, 0.0 if model == "re" else None)


def map_theta(theta_n: ThetaN) -> Theta:
    """Structural parameters as functions of the reparametrized ones:
    ``rho = r``, ``sigma_v_sq = r z_1 (sv + 1 - r)``, ``zeta = r z`` and
    ``pi_tilde = p + 1 - r``."""
    r = float(theta_n.r)
    if not r > 0:
        raise InadmissibleParameterError(f"r must be positive, got {r}")
    z1 = theta_n.z[0]
    sv = r * z1 * (theta_n.sv + 1.0 - r)
    pi = None if theta_n.p is None else theta_n.p + 1.0 - r
    return Theta(r, sv, r * theta_n.z, pi)


def unmap_theta(theta: Theta) -> ThetaN:
    """Inverse of :func:`map_theta`."""
    rho = float(theta.rho)
    if not rho > 0:
        raise InadmissibleParameterError(f"rho must be positive, got {rho}")
    z = theta.zeta / rho
    sv = theta.sigma_v_sq / theta.zeta[0] - (1.0 - rho)
    p = None if theta.pi_tilde is None else theta.pi_tilde - (1.0 - rho)
    return ThetaN(rho, sv, z, p)


def map_jacobian(theta_n: ThetaN) -> np.ndarray:
    """``d theta / d theta_n`` (rows structural, columns reparametrized)."""
    r, sv, z = theta_n.r, theta_n.sv, theta_n.z
    k = z.size
    dim = theta_n.dim
    J = np.zeros((dim, dim))
    J[0, 0] = 1.0
    J[1, 0] = z[0] * (sv + 1.0 - 2.0 * r)
    J[1, 1] = r * z[0]
    J[1, 2] = r * (sv + 1.0 - r)
    J[2:2 + k, 0] = z
    J[2:2 + k, 2:2 + k] = r * np.eye(k)
    if theta_n.p is not None:
        J[-1, 0] = -1.0
        J[-1, -1] = 1.0
    return J


def _map_second(theta_n: ThetaN) -> np.ndarray:
    """Second derivatives of the map, shape (dim, dim, dim) indexed as
    [structural component, reparam a, reparam b]."""
    r, sv, z = theta_n.r, theta_n.sv, theta_n.z
    k = z.size
    dim = theta_n.dim
    S = np.zeros((dim, dim, dim))
    # sigma_v_sq = r z1 (sv + 1 - r)
    S[1, 0, 0] = -2.0 * z[0]
    S[1, 0, 1] = S[1, 1, 0] = z[0]
    S[1, 0, 2] = S[1, 2, 0] = sv + 1.0 - 2.0 * r
    S[1, 1, 2] = S[1, 2, 1] = r
    # zeta = r z
    for t in range(k):
        S[2 + t, 0, 2 + t] = S[2 + t, 2 + t, 0] = 1.0
    return S


# ---------------------------------------------------------------------------
# data handling

def panel_array(data) -> np.ndarray:
    """Return the N x T observation matrix of a panel or array."""
    y = getattr(data, "y", data)
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] < 3:
        raise ValueError(f"panel must be N x T with T >= 3, got shape {y.shape}")
    return y


def _parts(y: np.ndarray, model: str):
    """(dependent, lagged regressor, y1) so that e = dep - rho*lag [- pi*y1]."""
    y1 = y[:, 0]
    if model == "fe":
        return y[:, 1:] - y1[:, None], y[:, :-1] - y1[:, None], y1
    return y[:, 1:], y[:, :-1], y1


def _residual(y: np.ndarray, theta: Theta):
    dep, lag, y1 = _parts(y, theta.model)
    e = dep - theta.rho * lag
    if theta.pi_tilde is not None:
        e = e - theta.pi_tilde * y1[:, None]
    return e, lag, y1


def phi_matrix(theta: Theta, T: int) -> np.ndarray:
    """``Phi = sigma_v_sq ii' + diag(psi)`` of order T-1."""
    n = T - 1
    return np.diag(theta.psi(T)) + theta.sigma_v_sq * np.ones((n, n))


def _phi_inverse(theta: Theta, T: int):
    Phi = phi_matrix(theta, T)
    if np.any(theta.psi(T) <= 0):
        raise InadmissibleParameterError("time variances must be positive")
    try:
        L = np.linalg.cholesky(Phi)
    except np.linalg.LinAlgError:
        raise InadmissibleParameterError("Phi is not positive definite") from None
    logdet = 2.0 * np.log(np.diag(L)).sum()
    Li = np.linalg.inv(L)
    return Li.T @ Li, logdet


# ---------------------------------------------------------------------------
# log-likelihoods

def loglik_i(data, theta: Theta) -> np.ndarray:
    """Per-individual log-likelihood contributions (dense Gaussian form)."""
    y = panel_array(data)
    T = y.shape[1]
    e, _, _ = _residual(y, theta)
    Pi, logdet = _phi_inverse(theta, T)
    quad = np.einsum("ij,jk,ik->i", e, Pi, e)
    return -0.5 * ((T - 1) * LOG2PI + logdet + quad)


def loglik(data, theta: Theta) -> float:
    """Total log-likelihood, RE or FE according to ``theta.model``."""
    return float(loglik_i(data, theta).sum())


def loglik_re(data, theta: Theta) -> float:
    """RE log-likelihood of ``u_i = y_i - rho y_{i,-1} - pi_tilde y_{i1}``."""
    if theta.pi_tilde is None:
        raise ValueError("RE likelihood needs pi_tilde")
    return loglik(data, theta)


def loglik_fe(data, theta: Theta) -> float:
    """FE log-likelihood via the factorization into the within part ``D w``
    and the weighted mean ``d'w`` with ``d = Psi^{-1} i / (i' Psi^{-1} i)``.

    The two parts are independent Gaussians with covariances ``D Psi D'`` and
    ``sigma_u^2 = 1/(i'Psi^{-1}i) + sigma_v_sq``; the Jacobian of
    ``w -> (Dw, d'w)`` has unit modulus.
    """
    y = panel_array(data)
    N, T = y.shape
    th = Theta(theta.rho, theta.sigma_v_sq, theta.zeta)
    w, _, _ = _residual(y, th)
    psi = th.psi(T)
    if np.any(psi <= 0):
        raise InadmissibleParameterError("time variances must be positive")
    s = np.sum(1.0 / psi)
    sig_u = 1.0 / s + th.sigma_v_sq
    if not sig_u > 0:
        raise InadmissibleParameterError("sigma_u^2 must be positive")
    D = diff_matrix(T)
    PsiD = (D * psi) @ D.T
    L = np.linalg.cholesky(PsiD)
    Dw = w @ D.T
    z = np.linalg.solve(L, Dw.T)
    l_within = -0.5 * (N * (T - 2) * LOG2PI + N * 2.0 * np.log(np.diag(L)).sum()
                       + np.sum(z * z))
    d = (1.0 / psi) / s
    dw = w @ d
    l_mean = -0.5 * (N * LOG2PI + N * np.log(sig_u) + np.sum(dw * dw) / sig_u)
    return float(l_within + l_mean)


# ---------------------------------------------------------------------------
# structural scores and Hessians

def _cov_derivs(theta: Theta, T: int) -> list[np.ndarray]:
    """dPhi/d(sigma_v_sq), dPhi/d(zeta_t)."""
    n = T - 1
    mats = [np.ones((n, n))]
    if theta.tsh:
        mats.append(np.eye(n))
    else:
        for t in range(n):
            E = np.zeros((n, n))
            E[t, t] = 1.0
            mats.append(E)
    return mats


def score(data, theta: Theta, per_individual: bool = False) -> np.ndarray:
    """Analytic gradient in structural coordinates.

    Returns the N x dim matrix of individual contributions when
    ``per_individual`` is true, else their sum.
    """
    y = panel_array(data)
    T = y.shape[1]
    e, lag, y1 = _residual(y, theta)
    Pi, _ = _phi_inverse(theta, T)
    f = e @ Pi
    cols = [np.sum(lag * f, axis=1)]
    sf = f.sum(axis=1)
    cols.append(0.5 * (sf * sf - Pi.sum()))
    if theta.tsh:
        cols.append(0.5 * (np.sum(f * f, axis=1) - np.trace(Pi)))
    else:
        cols.extend((0.5 * (f * f - np.diag(Pi))).T)
    if theta.pi_tilde is not None:
        cols.append(y1 * sf)
    S = np.column_stack(cols)
    return S if per_individual else S.sum(axis=0)


def score_fe(data, theta: Theta) -> np.ndarray:
    """FE gradient assembled from the factorized likelihood.

    The derivative in ``rho`` combines the within part and the weighted-mean
    part; the variance derivatives are taken holding ``sigma_u^2`` fixed and
    then chained through ``sigma_u^2 = 1/(i'Psi^{-1}i) + sigma_v_sq``.
    """
    y = panel_array(data)
    N, T = y.shape
    th = Theta(theta.rho, theta.sigma_v_sq, theta.zeta)
    w, lag, _ = _residual(y, th)
    psi = th.psi(T)
    s = np.sum(1.0 / psi)
    sig_u = 1.0 / s + th.sigma_v_sq
    D = diff_matrix(T)
    Vi = np.linalg.inv((D * psi) @ D.T)
    Dw = w @ D.T
    a = Dw @ Vi                       # (D Psi D')^{-1} D w, per row
    d = (1.0 / psi) / s
    dw = w @ d
    g_rho = np.sum((lag @ D.T) * a) + np.sum(dw * (lag @ d)) / sig_u
    g_sigu = -N / (2.0 * sig_u) + np.sum(dw * dw) / (2.0 * sig_u ** 2)
    # within part: 1/2 [ (D_t' a)^2 - D_t' V^{-1} D_t ] for each time t
    Da = a @ D                        # rows: D' (D Psi D')^{-1} D w
    within_t = 0.5 * (np.sum(Da * Da, axis=0) - N * np.einsum("it,ij,jt->t", D, Vi, D))
    # weighted-mean part holding sigma_u fixed: d(d'w)/d psi_t
    ddw = (-w / psi ** 2 / s + (w @ (1.0 / psi))[:, None] / psi ** 2 / s ** 2)
    mean_t = -np.sum(dw[:, None] * ddw, axis=0) / sig_u
    # chain through sigma_u^2
    dsig_dpsi = 1.0 / (psi ** 2 * s ** 2)
    g_psi = within_t + mean_t + g_sigu * dsig_dpsi
    g_zeta = np.array([g_psi.sum()]) if th.tsh else g_psi
    return np.concatenate([[g_rho, g_sigu], g_zeta])


def _mean_regressors(y: np.ndarray, theta: Theta):
    """Regressors X_beta with e = dep - sum beta X_beta; list of N x n."""
    _, lag, y1 = _parts(y, theta.model)
    out = [lag]
    if theta.pi_tilde is not None:
        out.append(np.repeat(y1[:, None], lag.shape[1], axis=1))
    return out


def _index(theta) -> tuple[list[int], list[int]]:
    """(mean-parameter indices, covariance-parameter indices)."""
    k = theta.zeta.size if isinstance(theta, Theta) else theta.z.size
    has_pi = (theta.pi_tilde if isinstance(theta, Theta) else theta.p) is not None
    mean = [0] + ([2 + k] if has_pi else [])
    cov = list(range(1, 2 + k))
    return mean, cov


def observed_hessian(data, theta: Theta) -> np.ndarray:
    """Analytic observed Hessian (total) in structural coordinates.

    ``Phi`` is linear in the variance parameters and the residual is linear
    in the mean parameters, so only first derivatives of both enter.
    """
    y = panel_array(data)
    N, T = y.shape
    e, _, _ = _residual(y, theta)
    Pi, _ = _phi_inverse(theta, T)
    f = e @ Pi
    X = _mean_regressors(y, theta)
    dPhi = _cov_derivs(theta, T)
    mean_idx, cov_idx = _index(theta)
    H = np.zeros((theta.dim, theta.dim))
    XP = [x @ Pi for x in X]
    K = [f @ Da for Da in dPhi]               # rows Phi_a f_i
    for i, a in enumerate(mean_idx):
        for j, b in enumerate(mean_idx):
            H[a, b] = -np.sum(XP[i] * X[j])
        for j, b in enumerate(cov_idx):
            H[a, b] = H[b, a] = -np.sum(XP[i] * K[j])
    for i, a in enumerate(cov_idx):
        KPa = K[i] @ Pi
        PDa = Pi @ dPhi[i]
        for j, b in enumerate(cov_idx):
            if j < i:
                continue
            val = 0.5 * N * np.sum(PDa * (Pi @ dPhi[j]).T) - np.sum(KPa * K[j])
            H[a, b] = H[b, a] = val
    return H


# ---------------------------------------------------------------------------
# reparametrized coordinates

def loglik_n(data, theta_n: ThetaN) -> float:
    return loglik(data, map_theta(theta_n))


def score_n(data, theta_n: ThetaN, per_individual: bool = False) -> np.ndarray:
    """Gradient in the reparametrized coordinates (chain rule through
    :func:`map_theta`)."""
    J = map_jacobian(theta_n)
    return score(data, map_theta(theta_n), per_individual) @ J


def observed_hessian_n(data, theta_n: ThetaN) -> np.ndarray:
    """Observed Hessian (total) in the reparametrized coordinates."""
    th = map_theta(theta_n)
    J = map_jacobian(theta_n)
    g = score(data, th)
    return J.T @ observed_hessian(data, th) @ J + np.einsum("k,kab->ab", g, _map_second(theta_n))


def _directional_hessian_i(y, theta: Theta, v: np.ndarray) -> np.ndarray:
    """Per-individual second derivative along structural direction v."""
    T = y.shape[1]
    e, _, _ = _residual(y, theta)
    Pi, _ = _phi_inverse(theta, T)
    f = e @ Pi
    X = _mean_regressors(y, theta)
    mean_idx, cov_idx = _index(theta)
    Xv = sum(v[a] * x for a, x in zip(mean_idx, X))
    Phiv = sum(v[a] * Da for a, Da in zip(cov_idx, _cov_derivs(theta, T)))
    Kv = f @ Phiv
    return (-np.einsum("ij,jk,ik->i", Xv, Pi, Xv)
            - 2.0 * np.sum((Xv @ Pi) * Kv, axis=1)
            + 0.5 * np.sum((Pi @ Phiv) * (Pi @ Phiv).T)
            - np.einsum("ij,jk,ik->i", Kv, Pi, Kv))


def second_derivative_r_i(data, theta_n: ThetaN) -> np.ndarray:
    """Per-individual ``d^2 l_i / d r^2`` with the other reparametrized
    coordinates held fixed."""
    y = panel_array(data)
    th = map_theta(theta_n)
    J = map_jacobian(theta_n)
    g = score(y, th, per_individual=True)
    curv = _map_second(theta_n)[:, 0, 0]
    return _directional_hessian_i(y, th, J[:, 0]) + g @ curv


# ---------------------------------------------------------------------------
# expected quantities (self-expectation, conditional on y1)

def _y1_moment(data_or_m2) -> float:
    if np.isscalar(data_or_m2):
        return float(data_or_m2)
    y = panel_array(data_or_m2)
    return float(np.mean(y[:, 0] ** 2))


def _design(data, T=None):
    """(T, mean of y1^2) from a panel, or from explicit T."""
    if data is None or np.isscalar(data):
        if T is None:
            raise ValueError("T is required when no panel is given")
        return int(T), float(data or 0.0)
    y = panel_array(data)
    return y.shape[1], float(np.mean(y[:, 0] ** 2))


def expected_hessian_structural(theta: Theta, T: int, y1_sq_mean: float = 0.0) -> np.ndarray:
    """Per-observation expected Hessian in structural coordinates, with the
    expectation taken under ``theta`` itself."""
    n = T - 1
    Pi, _ = _phi_inverse(theta, T)
    Phi = phi_matrix(theta, T)
    P = lag_filter(T, theta.rho)
    dPhi = _cov_derivs(theta, T)
    mean_idx, cov_idx = _index(theta)
    iota = np.ones(n)
    # second moments of the mean regressors and their covariance with e
    if theta.model == "fe":
        Exx = {(0, 0): P @ Phi @ P.T}
    else:
        pi_n = theta.pi_tilde - (1.0 - theta.rho)
        a = iota + pi_n * (P @ iota)
        m2 = y1_sq_mean
        Exx = {(0, 0): m2 * np.outer(a, a) + P @ Phi @ P.T,
               (0, 1): m2 * np.outer(a, iota),
               (1, 1): m2 * np.outer(iota, iota)}
        Exx[(1, 0)] = Exx[(0, 1)].T
    C = [Phi @ P.T] + ([np.zeros((n, n))] if theta.model == "re" else [])
    H = np.zeros((theta.dim, theta.dim))
    for i, a in enumerate(mean_idx):
        for j, b in enumerate(mean_idx):
            H[a, b] = -np.trace(Pi @ Exx[(j, i)])
        for j, b in enumerate(cov_idx):
            H[a, b] = H[b, a] = -np.trace(Pi @ dPhi[j] @ Pi @ C[i])
    for i, a in enumerate(cov_idx):
        PDa = Pi @ dPhi[i]
        for j, b in enumerate(cov_idx):
            H[a, b] = -0.5 * np.sum(PDa * (Pi @ dPhi[j]).T)
    return H


def expected_hessian(theta_n: ThetaN, data=None, T: int | None = None) -> np.ndarray:
    """Per-observation expected Hessian in reparametrized coordinates.

    ``data`` supplies T and (for RE) the sample second moment of ``y_{i1}``;
    alternatively pass ``data=None`` (or a scalar y1 moment) and ``T``.
    The expected score vanishes under self-expectation, so curvature of the
    map does not contribute.
    """
    T, m2 = _design(data, T)
    J = map_jacobian(theta_n)
    return J.T @ expected_hessian_structural(map_theta(theta_n), T, m2) @ J


def _truth_moments(theta0: Theta, T: int, m2: float):
    P0 = lag_filter(T, theta0.rho)
    Phi0 = phi_matrix(theta0, T)
    iota = np.ones(T - 1)
    if theta0.model == "re":
        a0 = iota + (theta0.pi_tilde - (1.0 - theta0.rho)) * (P0 @ iota)
    else:
        a0 = None
    return P0, Phi0, a0


def expected_loglik(theta_eval: ThetaN, theta_truth: ThetaN, y1_sq_mean: float = 0.0,
                    T: int | None = None) -> float:
    """Per-observation ``E_truth[l(theta_eval)]`` in closed form.

    Under the truth the residual at ``theta_eval`` is ``B u + y1 b`` with
    ``B = I + (rho0 - rho) P0`` and ``u ~ (0, Phi0)``, so only second
    moments enter.
    """
    if T is None:
        k = theta_truth.z.size
        if k == 1:
            raise ValueError("T is required under time-series homoskedasticity")
        T = k + 1
    return float(expected_taylor(theta_eval, theta_truth, None, y1_sq_mean, T, order=0)[0])


def _poly_mul(a, b):
    return np.convolve(a, b)


def expected_taylor(theta_eval: ThetaN, theta_truth: ThetaN, direction,
                    y1_sq_mean: float, T: int, order: int = 4) -> np.ndarray:
    """Directional derivatives ``d^k/dt^k E_truth[l(theta_eval + t v)]`` at
    t = 0 for k = 0..order, computed exactly by truncated power-series
    arithmetic (all structural quantities are polynomials in t).

    ``direction`` is a vector in reparametrized coordinates (``None`` gives
    only the value).
    """
    n = T - 1
    base = theta_eval.to_vector()
    dim = base.size
    v = np.zeros(dim) if direction is None else np.asarray(direction, dtype=float)
    model = theta_eval.model
    k_z = theta_eval.z.size
    K = order
    # polynomial coefficients (low order first) of the structural quantities
    r = np.array([base[0], v[0]])
    sv1 = np.array([base[1] + 1.0 - base[0], v[1] - v[0]])
    z = [np.array([base[2 + t], v[2 + t]]) for t in range(k_z)]
    sig_v = _poly_mul(_poly_mul(r, z[0]), sv1)
    zeta = [_poly_mul(r, zt) for zt in z]
    if model == "re":
        pi = np.array([base[-1] + 1.0 - base[0], v[-1] - v[0]])
    th0 = map_theta(theta_truth)
    if th0.model != model:
        raise ValueError("truth and evaluation point must share the model")
    P0, Phi0, a0 = _truth_moments(th0, T, y1_sq_mean)
    iota = np.ones(n)
    J1 = np.ones((n, n))
    deg = 3

    def coef(p, j):
        return p[j] if j < len(p) else 0.0

    Phi = np.zeros((deg + 1, n, n))
    for j in range(deg + 1):
        if k_z == 1:
            Phi[j] = coef(zeta[0], j) * np.eye(n)
        else:
            Phi[j] = np.diag([coef(zt, j) for zt in zeta])
        Phi[j] += coef(sig_v, j) * J1
    if np.any(np.linalg.eigvalsh(Phi[0]) <= 0) or np.any(
            np.array([coef(zt, 0) for zt in zeta]) <= 0):
        raise InadmissibleParameterError("Phi is not positive definite")
    # residual pieces: B(t) = B0 + B1 t, b(t) = b0 + b1 t
    B0 = np.eye(n) + (th0.rho - r[0]) * P0
    B1 = -r[1] * P0
    if model == "re":
        b0 = (th0.rho - r[0]) * a0 + (th0.pi_tilde - pi[0]) * iota
        b1 = -r[1] * a0 - pi[1] * iota
    else:
        b0 = b1 = np.zeros(n)
    m2 = y1_sq_mean
    M = np.zeros((3, n, n))
    M[0] = B0 @ Phi0 @ B0.T + m2 * np.outer(b0, b0)
    M[1] = B0 @ Phi0 @ B1.T + B1 @ Phi0 @ B0.T + m2 * (np.outer(b0, b1) + np.outer(b1, b0))
    M[2] = B1 @ Phi0 @ B1.T + m2 * np.outer(b1, b1)
    # inverse series X(t) = Phi(t)^{-1}
    X = np.zeros((K + 1, n, n))
    X0 = np.linalg.inv(Phi[0])
    X[0] = X0
    for k in range(1, K + 1):
        acc = np.zeros((n, n))
        for j in range(1, min(k, deg) + 1):
            acc += Phi[j] @ X[k - j]
        X[k] = -X0 @ acc
    # log-determinant series via d/dt log|Phi| = tr(Phi^{-1} Phi')
    L = np.zeros(K + 1)
    L[0] = np.linalg.slogdet(Phi[0])[1]
    dPhi = [(j + 1) * Phi[j + 1] for j in range(deg)]
    for k in range(1, K + 1):
        m = k - 1  # coefficient of t^m in tr(X Phi')
        s = 0.0
        for j in range(min(m, deg - 1) + 1):
            s += np.sum(X[m - j] * dPhi[j].T)
        L[k] = s / k
    Tr = np.zeros(K + 1)
    for k in range(K + 1):
        for j in range(min(k, 2) + 1):
            Tr[k] += np.sum(X[k - j] * M[j].T)
    f = -0.5 * L - 0.5 * Tr
    f[0] -= 0.5 * n * LOG2PI
    return np.array([factorial(k) * f[k] for k in range(K + 1)])


def expected_score(theta_eval: ThetaN, theta_truth: ThetaN, y1_sq_mean: float = 0.0,
                   T: int | None = None) -> np.ndarray:
    """Per-observation ``E_truth[d l / d theta_n]`` at ``theta_eval``."""
    T = T if T is not None else theta_eval.z.size + 1
    dim = theta_eval.dim
    out = np.empty(dim)
    for a in range(dim):
        e = np.zeros(dim)
        e[a] = 1.0
        out[a] = expected_taylor(theta_eval, theta_truth, e, y1_sq_mean, T, order=1)[1]
    return out


def expected_hessian_under(theta_eval: ThetaN, theta_truth: ThetaN,
                           y1_sq_mean: float = 0.0, T: int | None = None) -> np.ndarray:
    """Per-observation ``E_truth[d^2 l / d theta_n d theta_n']`` at
    ``theta_eval`` (mixed partials by polarization of exact directional
    derivatives). With ``theta_eval == theta_truth`` this equals
    :func:`expected_hessian`."""
    T = T if T is not None else theta_eval.z.size + 1
    dim = theta_eval.dim
    I = np.eye(dim)
    H = np.empty((dim, dim))
    for a in range(dim):
        for b in range(a, dim):
            plus = expected_taylor(theta_eval, theta_truth, I[a] + I[b], y1_sq_mean, T, 2)[2]
            minus = expected_taylor(theta_eval, theta_truth, I[a] - I[b], y1_sq_mean, T, 2)[2]
            H[a, b] = H[b, a] = 0.25 * (plus - minus)
    return H


def score_quadratic_forms(theta_eval: ThetaN, theta_truth: ThetaN, T: int):
    """FE individual scores as quadratic forms in the true residual.

    Under the truth ``u_i ~ N(0, Phi0)`` and each coordinate of the
    reparametrized FE score at ``theta_eval`` equals ``u' A_k u + c_k``.
    Returns ``(A, c, Phi0)`` with ``A`` of shape (dim, T-1, T-1).
    """
    if theta_eval.model != "fe":
        raise ValueError("quadratic-form representation is implemented for FE")
    th = map_theta(theta_eval)
    th0 = map_theta(theta_truth)
    P0 = lag_filter(T, th0.rho)
    Phi0 = phi_matrix(th0, T)
    B = np.eye(T - 1) + (th0.rho - th.rho) * P0
    Pi, _ = _phi_inverse(th, T)
    mats, consts = [], []
    G = P0.T @ Pi @ B
    mats.append(0.5 * (G + G.T))
    consts.append(0.0)
    for Da in _cov_derivs(th, T):
        mats.append(0.5 * B.T @ Pi @ Da @ Pi @ B)
        consts.append(-0.5 * np.trace(Pi @ Da))
    J = map_jacobian(theta_eval)
    A = np.einsum("kj,kab->jab", J, np.array(mats))
    c = np.array(consts) @ J
    return A, c, Phi0


# ---------------------------------------------------------------------------
# singular-point derivatives and OPG

@dataclass(frozen=True)
class SingularPointDerivatives:
    """Ingredients of the unit-root statistic.

    ``S1[i] = 0.5 d^2 l_i / d r^2``; ``S2[i]`` the score in the remaining
    coordinates; ``Htilde`` the per-observation matrix with blocks
    ``(2/4!) E d^4 l/dr^4``, ``(1/2!) E d^3 l/dr^2 dd`` and ``E d^2 l/dd dd'``.
    """

    S1: np.ndarray
    S2: np.ndarray
    Htilde: np.ndarray

    @property
    def S(self) -> np.ndarray:
        return np.column_stack([self.S1, self.S2])


def _directional(theta_n, v, m2, T, order):
    return expected_taylor(theta_n, theta_n, v, m2, T, order=order)[order]


def singular_derivatives(theta_n: ThetaN, data, T: int | None = None,
                         y1_sq_mean: float | None = None) -> SingularPointDerivatives:
    """Per-individual (S1, S2) and the expected-derivative matrix Htilde at
    ``theta_n``; expectations under ``theta_n`` itself."""
    y = panel_array(data)
    T = y.shape[1]
    m2 = float(np.mean(y[:, 0] ** 2)) if y1_sq_mean is None else y1_sq_mean
    dim = theta_n.dim
    S1 = 0.5 * second_derivative_r_i(y, theta_n)
    S2 = score_n(y, theta_n, per_individual=True)[:, 1:]
    Ht = np.zeros((dim, dim))
    er = np.zeros(dim)
    er[0] = 1.0
    Ht[0, 0] = 2.0 / 24.0 * _directional(theta_n, er, m2, T, 4)
    for j in range(1, dim):
        ed = np.zeros(dim)
        ed[j] = 1.0
        d3 = (_directional(theta_n, er + ed, m2, T, 3)
              - _directional(theta_n, er - ed, m2, T, 3)
              - 2.0 * _directional(theta_n, ed, m2, T, 3)) / 6.0
        Ht[0, j] = Ht[j, 0] = 0.5 * d3
    Ht[1:, 1:] = expected_hessian(theta_n, m2, T)[1:, 1:]
    return SingularPointDerivatives(S1, S2, Ht)


def opg(theta_n: ThetaN, data, centered: bool = False) -> np.ndarray:
    """Average outer product of individual scores (optionally centered)."""
    S = score_n(data, theta_n, per_individual=True)
    return _outer_mean(S, centered)


def _outer_mean(S: np.ndarray, centered: bool) -> np.ndarray:
    if centered:
        S = S - S.mean(axis=0)
    return S.T @ S / S.shape[0]


@dataclass
class LikelihoodEval:
    """Bundle of likelihood quantities at one reparametrized point."""

    value: float
    per_individual_scores: np.ndarray
    observed_hessian: np.ndarray
    expected_hessian: np.ndarray
    opg: np.ndarray = field(repr=False)
    opg_centered: np.ndarray = field(repr=False)


def evaluate(data, theta_n: ThetaN) -> LikelihoodEval:
    y = panel_array(data)
    S = score_n(y, theta_n, per_individual=True)
    return LikelihoodEval(
        value=loglik_n(y, theta_n),
        per_individual_scores=S,
        observed_hessian=observed_hessian_n(y, theta_n),
        expected_hessian=expected_hessian(theta_n, y),
        opg=_outer_mean(S, False),
        opg_centered=_outer_mean(S, True),
    )
