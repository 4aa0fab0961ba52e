"""
Identification-robust tests on the autoregressive coefficient.

* :func:`qlm_test` -- quasi-LM statistic built from the restricted score,
  the expected Hessian and an OPG estimate of the information,

      QLM = N^{-1} g' H^{-1} A' (A H^{-1} J H^{-1} A')^{-1} A H^{-1} g,

  with ``g`` the total score and ``H``, ``J`` per-observation averages;
* :func:`qlm1_test` -- the version for hypotheses that put ``rho`` at one,
  where the score in ``r`` vanishes and is replaced by half the second
  derivative, with expected higher-order derivatives in place of ``H``;
* :func:`qlm_c_test` -- the FE statistic with a centered OPG;
* :func:`gmm_ar_test` -- Anderson-Rubin type statistic on second-moment
  conditions of the differenced data;
* :func:`confidence_set` -- inversion of the QLM tests over a grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .estimation import FitError, FitOptions, FitResult, Restriction, fit
from .likelihood import (
    InadmissibleParameterError,
    _outer_mean,
    expected_hessian,
    expected_hessian_structural,
    panel_array,
    score,
    score_n,
    singular_derivatives,
)
from .matrixkit import band_matrix, selector, vech

__all__ = [
    "TestResult",
    "ConfidenceSet",
    "UnitRootHypothesisError",
    "adjugate",
    "qlm_statistic",
    "qlm_test",
    "qlm1_test",
    "qlm_c_test",
    "gmm_ar_moments",
    "gmm_ar_test",
    "confidence_set",
    "default_grid",
]


class UnitRootHypothesisError(ValueError):
    """The hypothesis puts rho at one; use :func:`qlm1_test` instead."""


@dataclass
class TestResult:
    """Outcome of one test evaluation."""

    __test__ = False  # not a pytest class

    variant: str
    statistic: float
    df: int
    p_value: float
    restricted_fit: FitResult | None = None
    noncentrality_hint: float | None = None
    a: float | None = None
    details: dict = field(default_factory=dict, repr=False)

    @property
    def converged(self) -> bool:
        return True if self.restricted_fit is None else self.restricted_fit.converged

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level

    def as_row(self) -> dict:
        return dict(variant=self.variant, a=self.a, statistic=self.statistic, df=self.df,
                    p_value=self.p_value, converged=self.converged)


@dataclass
class ConfidenceSet:
    """Grid inversion of a test: ``accepted[k]`` holds when the test at
    ``grid[k]`` does not reject; ``intervals`` are maximal accepted runs."""

    level: float
    grid: np.ndarray
    accepted: np.ndarray
    intervals: list
    statistics: np.ndarray = field(repr=False, default=None)
    failures: dict = field(default_factory=dict, repr=False)


def adjugate(M: np.ndarray) -> np.ndarray:
    """Classical adjoint from cofactors, ``adj(M)[j, i] = (-1)^{i+j} det(M_ij)``."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 1:
        return np.ones((1, 1))
    out = np.empty_like(M)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(M, i, axis=0), j, axis=1)
            out[j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return out


def qlm_statistic(g_total: np.ndarray, H: np.ndarray, J: np.ndarray, A: np.ndarray, N: int,
                  use_adjugate: bool = False) -> float:
    """``N^{-1} g'K'A'(A K J K' A')^{-1} A K g`` with ``K = H^{-1}`` (or
    ``adj(H)``, which gives the same value)."""
    A = np.atleast_2d(A)
    K = adjugate(H) if use_adjugate else np.linalg.inv(H)
    v = A @ K @ g_total
    mid = A @ K @ J @ K.T @ A.T
    try:
        w = np.linalg.solve(mid, v)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular middle matrix in the QLM statistic") from exc
    return float(v @ w / N)


def _chi2_sf(x, df):
    return float(stats.chi2.sf(max(x, 0.0), df))


def _restriction(A, a, model, tsh, T) -> Restriction:
    dim = 2 + (1 if tsh else T - 1) + (model == "re")
    if A is None:
        return Restriction.on_rho(float(np.atleast_1d(a)[0]), dim)
    return Restriction(A, a)


def _check_model(model):
    model = model.lower()
    if model not in ("fe", "re"):
        raise ValueError(f"model must be 'fe' or 're', got {model!r}")
    return model


def _fixes_unit_root(R: Restriction) -> bool:
    """True when ``A theta = a`` forces ``r = 1``."""
    e1 = np.zeros(R.A.shape[1])
    e1[0] = 1.0
    # r is determined by the restriction iff e1 lies in the row space of A
    coef, *_ = np.linalg.lstsq(R.A.T, e1, rcond=None)
    if np.linalg.norm(R.A.T @ coef - e1) > 1e-10:
        return False
    return abs(float(coef @ R.a) - 1.0) < 1e-12


def _fits_exactly(y, rho: float) -> bool:
    """True if ``rho`` reproduces every differenced path without error.

    The restricted likelihood is then unbounded, the restricted model attains
    the supremum of the unrestricted one and the LM statistic is zero.
    """
    dy = np.diff(y, axis=1)
    if dy.shape[1] < 2:
        return False
    resid = dy[:, 1:] - rho * dy[:, :-1]
    return float(np.abs(resid).max()) <= 1e-10 * max(float(np.abs(dy).max()), 1e-300)


def _ingredients(y, fitres: FitResult, R: Restriction, centered: bool):
    """Total score, expected Hessian and OPG in the coordinates used by the
    restriction (reparametrized for r > 0, structural otherwise)."""
    if fitres.theta_n is not None:
        tn = fitres.theta_n
        S = score_n(y, tn, per_individual=True)
        H = expected_hessian(tn, y)
    else:
        if R.rho_value is None:
            raise ValueError("general restrictions need rho > 0")
        th = fitres.theta
        S = score(y, th, per_individual=True)
        H = expected_hessian_structural(th, y.shape[1], float(np.mean(y[:, 0] ** 2)))
    return S.sum(axis=0), H, _outer_mean(S, centered)


def qlm_test(data, model: str = "fe", A=None, a=0.0, *, tsh: bool = True,
             centered: bool = False, use_adjugate: bool = False,
             options: FitOptions | None = None, variant: str = "qlm") -> TestResult:
    """Quasi-LM test of ``A theta_n = a`` with the expected Hessian.

    ``A=None`` tests ``rho = a`` for scalar ``a``. Hypotheses that fix
    ``rho = 1`` raise :class:`UnitRootHypothesisError`.
    """
    model = _check_model(model)
    y = panel_array(data)
    N, T = y.shape
    R = _restriction(A, a, model, tsh, T)
    if _fixes_unit_root(R):
        raise UnitRootHypothesisError("QLM is not defined at rho = 1; use qlm1_test")
    fr = fit(y, model, R, tsh, options)
    if _fits_exactly(y, fr.theta.rho):
        stat = 0.0
    else:
        g, H, J = _ingredients(y, fr, R, centered)
        stat = qlm_statistic(g, H, J, R.A, N, use_adjugate)
    return TestResult(variant, stat, R.J, _chi2_sf(stat, R.J), fr, a=R.rho_value,
                      details=dict(centered=centered))


def qlm1_test(data, model: str = "fe", A=None, a=1.0, *, tsh: bool = True,
              centered: bool = False, options: FitOptions | None = None) -> TestResult:
    """QLM test for hypotheses that include ``rho = 1``.

    The ``r``-component of the score is replaced by
    ``S_{i,1} = 1/2 d^2 l_i / d r^2`` and the expected Hessian by the matrix
    of expected fourth (r, r), third (r, other) and second (other, other)
    derivatives.
    """
    model = _check_model(model)
    y = panel_array(data)
    N, T = y.shape
    R = _restriction(A, a, model, tsh, T)
    if not _fixes_unit_root(R):
        raise ValueError("qlm1_test requires a hypothesis that fixes rho = 1")
    fr = fit(y, model, R, tsh, options)
    sd = singular_derivatives(fr.theta_n, y)
    S = sd.S
    stat = qlm_statistic(S.sum(axis=0), sd.Htilde, _outer_mean(S, centered), R.A, N)
    return TestResult("qlm1", stat, R.J, _chi2_sf(stat, R.J), fr, a=1.0,
                      details=dict(centered=centered))


def qlm_c_test(data, a: float, *, model: str = "fe", tsh: bool = True,
               options: FitOptions | None = None) -> TestResult:
    """Centered-OPG QLM test of ``rho = a`` (FE likelihood by default)."""
    return qlm_test(data, model, None, a, tsh=tsh, centered=True, options=options,
                    variant="qlm_c")


# ---------------------------------------------------------------------------
# GMM-AR

def gmm_ar_moments(data, rho: float) -> np.ndarray:
    """Per-individual moments ``P vech(D_rho dy_i dy_i' D_rho')`` (N x p).

    ``dy_i`` stacks the T-1 first differences and ``D_rho`` has unit diagonal
    and ``-rho`` on the first subdiagonal. ``P`` removes the first element of
    the half-vectorization and absorbs the unknown error variance, so the
    moments have mean zero at the true ``rho`` under homoskedasticity.
    """
    y = panel_array(data)
    T = y.shape[1]
    if T < 4:
        raise ValueError("GMM-AR needs T >= 4 so that at least one moment remains")
    dy = np.diff(y, axis=1)
    n = T - 1
    D = band_matrix(n + 1, rho)
    u = dy @ D.T
    P = selector(n).P
    cols, rows = np.triu_indices(n)
    outer = u[:, rows] * u[:, cols]          # vech of u u', row by row
    return outer @ P.T


def gmm_ar_test(data, rho: float, *, centered: bool = True) -> TestResult:
    """``N m' V^{-1} m`` with ``m`` the mean moment vector and ``V`` its
    (centered by default) sample covariance; chi-square with
    ``T(T-1)/2 - 2`` degrees of freedom."""
    y = panel_array(data)
    M = gmm_ar_moments(y, rho)
    N, p = M.shape
    if N <= p:
        raise ValueError(f"need N > {p} individuals for GMM-AR")
    m = M.mean(axis=0)
    V = _outer_mean(M, centered)
    try:
        stat = float(N * m @ np.linalg.solve(V, m))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular moment covariance") from exc
    return TestResult("gmm_ar", stat, p, _chi2_sf(stat, p), None, a=float(rho),
                      details=dict(centered=centered))


# ---------------------------------------------------------------------------
# confidence sets

def default_grid(lo: float = -0.99, hi: float = 1.0, n: int = 401) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _runs(grid, accepted):
    out = []
    start = None
    for k, ok in enumerate(accepted):
        if ok and start is None:
            start = k
        if start is not None and (not ok or k == len(grid) - 1):
            end = k if ok else k - 1
            out.append([float(grid[start]), float(grid[end])])
            start = None
    return out


def confidence_set(data, model: str = "fe", level: float = 0.95, grid=None, *,
                   tsh: bool = True, centered: bool = False,
                   options: FitOptions | None = None) -> ConfidenceSet:
    """Grid points at which the QLM test (QLM1 at one) does not reject."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid <= -1.0) or np.any(grid > 1.0):
        raise ValueError("grid must lie in (-1, 1]")
    alpha = 1.0 - level
    accepted = np.zeros(grid.size, dtype=bool)
    statistics = np.full(grid.size, np.nan)
    failures = {}
    for k, r in enumerate(grid):
        try:
            if r == 1.0:
                res = qlm1_test(data, model, None, 1.0, tsh=tsh, centered=centered,
                                options=options)
            else:
                res = qlm_test(data, model, None, r, tsh=tsh, centered=centered,
                               options=options)
        except (FitError, InadmissibleParameterError, np.linalg.LinAlgError) as exc:
            failures[float(r)] = str(exc)
            continue
        statistics[k] = res.statistic
        accepted[k] = res.p_value >= alpha
    return ConfidenceSet(level, grid, accepted, _runs(grid, accepted), statistics, failures)
