"""
Restricted and unrestricted quasi-ML estimation.

Variances are constrained to ``sigma^2 > 0`` and ``sigma_v_sq >= 0``; when
the bound on ``sigma_v_sq`` binds, the fit is repeated on the larger region
where only ``Phi`` positive definite is required (``(T-1) sigma_v_sq +
sigma^2 > 0`` under homoskedasticity) and the better of the two solutions is
kept.

With ``rho`` fixed and homoskedastic time variances the nuisance parameters
have closed forms: ``Phi`` has eigenvalue ``sigma^2`` on the within space and
``sigma^2 + (T-1) sigma_v_sq`` along the ones vector. Unrestricted fits
maximize the resulting profile likelihood in ``rho`` from a deterministic
multistart grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import null_space

from .likelihood import (
    InadmissibleParameterError,
    Theta,
    ThetaN,
    _parts,
    loglik,
    loglik_n,
    map_theta,
    panel_array,
    phi_matrix,
    score,
    score_n,
    unmap_theta,
)

__all__ = ["Restriction", "FitOptions", "FitResult", "FitError", "fit",
           "fit_given_rho", "profile_loglik"]


class FitError(RuntimeError):
    """Raised when no start point yields a finite optimum."""


@dataclass(frozen=True)
class Restriction:
    """Linear restriction ``A theta_n = a`` in reparametrized coordinates."""

    A: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if A.shape[0] != a.shape[0]:
            raise ValueError("A and a have inconsistent row counts")
        if np.linalg.matrix_rank(A) != A.shape[0]:
            raise ValueError("A must have full row rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "a", a)

    @classmethod
    def on_rho(cls, value: float, dim: int) -> "Restriction":
        A = np.zeros((1, dim))
        A[0, 0] = 1.0
        return cls(A, [value])

    @property
    def J(self) -> int:
        return self.A.shape[0]

    @property
    def rho_value(self) -> float | None:
        """The hypothesized rho when the restriction fixes rho alone."""
        A = self.A
        if A.shape[0] == 1 and A[0, 0] != 0 and np.all(A[0, 1:] == 0):
            return float(self.a[0] / A[0, 0])
        return None


@dataclass(frozen=True)
class FitOptions:
    rho_bounds: tuple = (-0.999, 1.5)
    rho_starts: tuple = (0.0, 0.5, 0.9, 0.99, 1.0)
    grid_size: int = 41
    xatol: float = 1e-11
    max_iter: int = 500
    gtol: float = 1e-8
    var_floor: float = 1e-12


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``theta`` holds structural parameters; ``theta_n`` the reparametrized
    ones (``None`` when ``rho <= 0``). ``regime`` is ``"bounded"`` when the
    ``sigma_v_sq >= 0`` solution was kept and ``"relaxed"`` otherwise.
    """

    theta: Theta
    theta_n: ThetaN | None
    loglik: float
    converged: bool
    n_starts_used: int
    active_bounds: frozenset = field(default_factory=frozenset)
    gradient_norm: float = 0.0
    regime: str = "bounded"
    model: str = "fe"

    @property
    def theta_hat(self) -> np.ndarray:
        if self.theta_n is not None:
            return self.theta_n.to_vector()
        return self.theta.to_vector()

    def covariance(self, T: int) -> np.ndarray:
        return phi_matrix(self.theta, T)


# ---------------------------------------------------------------------------
# nuisance parameters at fixed rho

def _tsh_nuisance(y: np.ndarray, rho: float, model: str, floor: float):
    """Closed-form nuisance MLE under homoskedasticity.

    Returns (sigma_v_sq, sigma_sq, pi_tilde, bound_binds) on the relaxed
    region together with the bounded solution.
    """
    N, T = y.shape
    n = T - 1
    dep, lag, y1 = _parts(y, model)
    e = dep - rho * lag
    pi = None
    if model == "re":
        s1 = e.sum(axis=1)
        yy = np.dot(y1, y1)
        pi = float(np.dot(s1, y1) / (n * yy)) if yy > 0 else 0.0
        e = e - pi * y1[:, None]
    s = e.sum(axis=1)
    ss = np.einsum("ij,ij->", e, e)
    mean_part = np.dot(s, s) / n
    within = ss - mean_part
    scale = max(ss / (N * n), 1.0) * floor
    sig2 = max(within / (N * (n - 1)), scale)
    lam = max(mean_part / N, scale)       # sigma^2 + (T-1) sigma_v_sq
    sv_relaxed = (lam - sig2) / n
    if sv_relaxed >= 0:
        return (sv_relaxed, sig2, pi), None
    sig2_b = max(ss / (N * n), scale)     # sigma_v_sq clamped at 0
    return (sv_relaxed, sig2, pi), (0.0, sig2_b, pi)


def _het_nuisance(y: np.ndarray, rho: float, model: str, start: Theta, opts: FitOptions):
    """Numerical nuisance MLE with free time variances at fixed rho.

    Returns (relaxed Theta, bounded Theta or None, converged).
    """
    N, T = y.shape
    has_pi = model == "re"
    k = T - 1

    def unpack_bounded(x):
        pi = x[-1] if has_pi else None
        return Theta(rho, x[0], np.exp(x[1:1 + k]), pi)

    def f_bounded(x):
        th = unpack_bounded(x)
        try:
            val = loglik(y, th)
            g = score(y, th)
        except InadmissibleParameterError:
            return np.inf, np.zeros_like(x)
        grad = np.concatenate([[g[1]], g[2:2 + k] * th.zeta] + ([[g[-1]]] if has_pi else []))
        return -val / N, -grad / N

    x0 = np.concatenate([[max(start.sigma_v_sq, 0.0)], np.log(start.psi(T))]
                        + ([[start.pi_tilde or 0.0]] if has_pi else []))
    bounds = [(0.0, None)] + [(None, None)] * (k + has_pi)
    res = optimize.minimize(f_bounded, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options=dict(maxiter=opts.max_iter, gtol=1e-10, ftol=1e-15))
    th_b = unpack_bounded(res.x)
    converged = bool(res.success)
    if res.x[0] > 0:
        return th_b, None, converged

    # relaxed: sigma_v_sq = sigma_u^2 - 1/sum(1/zeta) with log sigma_u^2 free
    def unpack_relaxed(x):
        zeta = np.exp(x[1:1 + k])
        sv = np.exp(x[0]) - 1.0 / np.sum(1.0 / zeta)
        pi = x[-1] if has_pi else None
        return Theta(rho, sv, zeta, pi)

    def f_relaxed(x):
        th = unpack_relaxed(x)
        try:
            val = loglik(y, th)
            g = score(y, th)
        except InadmissibleParameterError:
            return np.inf, np.zeros_like(x)
        su = np.exp(x[0])
        zeta = th.zeta
        s = np.sum(1.0 / zeta)
        # d sigma_v_sq / d log zeta_t = -(1/zeta_t) / s^2
        gz = g[2:2 + k] * zeta - g[1] / (zeta * s ** 2)
        grad = np.concatenate([[g[1] * su], gz] + ([[g[-1]]] if has_pi else []))
        return -val / N, -grad / N

    z0 = th_b.zeta
    x1 = np.concatenate([[np.log(1.0 / np.sum(1.0 / z0) + th_b.sigma_v_sq)], np.log(z0)]
                        + ([[th_b.pi_tilde]] if has_pi else []))
    res2 = optimize.minimize(f_relaxed, x1, jac=True, method="BFGS",
                             options=dict(maxiter=opts.max_iter, gtol=1e-10))
    th_r = unpack_relaxed(res2.x)
    return th_r, th_b, converged and np.isfinite(res2.fun)


def fit_given_rho(data, rho: float, model: str = "fe", tsh: bool = True,
                  options: FitOptions | None = None, _start: Theta | None = None) -> FitResult:
    """Maximize the likelihood over the nuisance parameters with ``rho``
    fixed, applying the two-stage variance constraint."""
    opts = options or FitOptions()
    y = panel_array(data)
    N, T = y.shape
    rho = float(rho)
    if tsh:
        relaxed, bounded = _tsh_nuisance(y, rho, model, opts.var_floor)
        th_r = Theta(rho, relaxed[0], [relaxed[1]], relaxed[2])
        th_b = None if bounded is None else Theta(rho, bounded[0], [bounded[1]], bounded[2])
        converged = True
    else:
        if _start is None:
            rel, _ = _tsh_nuisance(y, rho, model, opts.var_floor)
            sv0 = max(rel[0], 0.0)
            dep, lag, y1 = _parts(y, model)
            e = dep - rho * lag - (0.0 if rel[2] is None else rel[2] * y1[:, None])
            zeta0 = np.maximum(e.var(axis=0) - sv0, 0.1 * rel[1])
            _start = Theta(rho, sv0, zeta0, rel[2])
        th_r, th_b, converged = _het_nuisance(y, rho, model, _start, opts)
    l_r = loglik(y, th_r)
    regime, theta, value = "bounded", th_r, l_r
    active = frozenset()
    if th_b is not None:
        l_b = loglik(y, th_b)
        active = frozenset({"sigma_v_sq"})
        if l_r >= l_b:
            regime = "relaxed"
        else:
            theta, value = th_b, l_b
    g = score(y, theta)
    gnorm = float(np.max(np.abs(g[1:]))) if g.size > 1 else 0.0
    theta_n = unmap_theta(theta) if rho > 0 else None
    return FitResult(theta, theta_n, float(value), bool(converged), 1, active,
                     gnorm, regime, model)


def profile_loglik(data, rho: float, model: str = "fe", tsh: bool = True,
                   options: FitOptions | None = None) -> float:
    """Likelihood maximized over the nuisance parameters at fixed rho."""
    return fit_given_rho(data, rho, model, tsh, options).loglik


# ---------------------------------------------------------------------------
# unrestricted fit: multistart profile maximization

def _fit_unrestricted(y, model, tsh, opts: FitOptions) -> FitResult:
    lo, hi = opts.rho_bounds
    grid = np.unique(np.concatenate([np.linspace(lo, hi, opts.grid_size),
                                     np.clip(opts.rho_starts, lo, hi)]))
    cache = {}

    def prof(r):
        r = float(r)
        if r not in cache:
            try:
                cache[r] = fit_given_rho(y, r, model, tsh, opts)
            except (InadmissibleParameterError, np.linalg.LinAlgError):
                cache[r] = None
        res = cache[r]
        return -np.inf if res is None else res.loglik

    vals = np.array([prof(r) for r in grid])
    if not np.any(np.isfinite(vals)):
        raise FitError("likelihood is not finite at any start point")
    # refine every local maximum of the grid profile; keep the best
    candidates = []
    for j in range(len(grid)):
        left = vals[j - 1] if j > 0 else -np.inf
        right = vals[j + 1] if j + 1 < len(grid) else -np.inf
        if np.isfinite(vals[j]) and vals[j] >= left and vals[j] >= right:
            a = grid[max(j - 1, 0)]
            b = grid[min(j + 1, len(grid) - 1)]
            res = optimize.minimize_scalar(lambda r: -prof(r), bounds=(a, b), method="bounded",
                                           options=dict(xatol=opts.xatol, maxiter=opts.max_iter))
            r_best = res.x if -res.fun >= vals[j] else grid[j]
            candidates.append((prof(r_best), -j, r_best))
    candidates.sort(reverse=True)
    _, _, r_hat = candidates[0]
    best = cache[float(r_hat)]
    g = score(y, best.theta)
    gnorm = float(np.max(np.abs(g)))
    interior = lo < r_hat < hi
    active = set(best.active_bounds)
    if not interior:
        active.add("rho")
    converged = best.converged and (not interior or gnorm < max(1e-5 * y.shape[0], 1e-6)
                                    or best.regime == "bounded")
    return FitResult(best.theta, best.theta_n, best.loglik, bool(converged), len(candidates),
                     frozenset(active), gnorm, best.regime, model)


# ---------------------------------------------------------------------------
# general linear restrictions in reparametrized coordinates

def _fit_linear(y, model, tsh, restriction: Restriction, opts: FitOptions,
                start: FitResult | None) -> FitResult:
    A, a = restriction.A, restriction.a
    T = y.shape[1]
    dim = 2 + (1 if tsh else T - 1) + (model == "re")
    if A.shape[1] != dim:
        raise ValueError(f"restriction has {A.shape[1]} columns, model dimension is {dim}")
    x_part = np.linalg.lstsq(A, a, rcond=None)[0]
    Nmat = null_space(A)
    N = y.shape[0]

    def theta_of(eta):
        return ThetaN.from_vector(x_part + Nmat @ eta, model)

    def obj(eta):
        tn = theta_of(eta)
        try:
            val = loglik_n(y, tn)
            g = score_n(y, tn)
        except (InadmissibleParameterError, np.linalg.LinAlgError):
            return 1e300, np.zeros_like(eta)
        return -val / N, -(Nmat.T @ g) / N

    if Nmat.shape[1] == 0:
        # the restriction pins down every coordinate
        tn = ThetaN.from_vector(x_part, model)
        th = map_theta(tn)
        return FitResult(th, tn, loglik(y, th), True, 0, frozenset(), 0.0, "relaxed", model)
    starts = []
    if start is not None and start.theta_n is not None:
        starts.append(start.theta_n.to_vector())
    ts = np.array([1.0, 0.0] + [float(np.var(np.diff(y, axis=1)))] * (dim - 2 - (model == "re"))
                  + ([0.0] if model == "re" else []))
    starts.append(ts)
    best = None
    used = 0
    for s in starts:
        eta0 = Nmat.T @ (s - x_part)
        if obj(eta0)[0] >= 1e300:
            continue
        used += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(obj, eta0, jac=True, method="BFGS",
                                    options=dict(maxiter=opts.max_iter, gtol=1e-9))
            if not np.isfinite(res.fun) or res.fun >= 1e300:
                res = optimize.minimize(lambda e: obj(e)[0], eta0, method="Nelder-Mead",
                                        options=dict(maxiter=20 * opts.max_iter, xatol=1e-10,
                                                     fatol=1e-14))
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError("no admissible start point satisfies the restriction")
    tn = theta_of(best.x)
    # enforce the restriction to rounding error
    v = tn.to_vector()
    v = v - np.linalg.lstsq(A, A @ v - a, rcond=None)[0]
    tn = ThetaN.from_vector(v, model)
    th = map_theta(tn)
    g = Nmat.T @ score_n(y, tn)
    return FitResult(th, tn, loglik(y, th), bool(best.success), used, frozenset(),
                     float(np.max(np.abs(g))) if g.size else 0.0, "relaxed", model)


def fit(data, model: str = "fe", restriction: Restriction | None = None, tsh: bool = True,
        options: FitOptions | None = None) -> FitResult:
    """Quasi-ML fit of the RE or FE likelihood.

    Parameters
    ----------
    data : PanelData or ndarray
        N x T panel.
    model : {"fe", "re"}
    restriction : Restriction, optional
        Linear restriction on the reparametrized coordinates. Restrictions
        fixing rho alone are solved by profiling the nuisance parameters.
    tsh : bool
        Impose a common time variance.
    """
    model = model.lower()
    if model not in ("fe", "re"):
        raise ValueError(f"model must be 'fe' or 're', got {model!r}")
    opts = options or FitOptions()
    y = panel_array(data)
    if restriction is None:
        return _fit_unrestricted(y, model, tsh, opts)
    dim = 2 + (1 if tsh else y.shape[1] - 1) + (model == "re")
    if restriction.A.shape[1] != dim:
        raise ValueError(f"restriction has {restriction.A.shape[1]} columns, "
                         f"model dimension is {dim}")
    rho = restriction.rho_value
    if rho is not None:
        return fit_given_rho(y, rho, model, tsh, opts)
    return _fit_linear(y, model, tsh, restriction, opts, _fit_unrestricted(y, model, tsh, opts))
