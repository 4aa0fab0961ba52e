"""
Local power at the second-order-identified unit root.

Under ``rho = 1`` with equal time variances, the FE centered QLM test of
``rho = 1 - e N^{-1/4}`` has a noncentral chi-square(1) limit with
noncentrality ``e^4 (2T-3)T(T-1)(T-2)/72``. The same constant is reached
three ways here:

* the score-mean / Hessian / information sandwich of the rescaled FE
  likelihood (:func:`theorem6_ingredients`);
* the quadratic form of the GMM-AR moment mean in the inverse moment
  covariance (:func:`gmm_ar_delta`);
* the largest generalized eigenvalue of the moment-mean outer product
  against the moment covariance, which bounds the noncentrality of every
  one-degree-of-freedom combination of the moments (:func:`map_delta`).

The noncentral chi-square survival function is evaluated as a Poisson
mixture of central chi-square tails.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import special, stats

from .likelihood import (
    ThetaN,
    expected_hessian,
    expected_score,
    score_quadratic_forms,
    theta_star,
)
from .matrixkit import (
    at,
    ft,
    gt,
    gt_inverse,
    ht,
    inverse,
    m_inverse,
    matmul,
    m_matrix,
    pbar,
    selector,
    solve,
    trace_identities,
    trace_identities_closed_form,
    vec,
    vech,
)

__all__ = [
    "PowerCurve",
    "Theorem6Ingredients",
    "noncentral_chi2_sf",
    "chi2_critical_value",
    "delta_constant",
    "delta_qlm_tsh",
    "sandwich_delta",
    "theorem6_ingredients",
    "gmm_ar_moment_mean",
    "gmm_ar_delta",
    "map_delta",
    "gmm_ar_power",
    "qlm_c_power",
    "map_curve",
    "power_curve",
    "delta_sandwich_general",
    "sandwich_delta_at",
    "CheckResult",
    "verify_constants",
    "verify_lemmas",
    "verify_deltas",
]


# ---------------------------------------------------------------------------
# noncentral chi-square

def noncentral_chi2_sf(x: float, df: float, delta: float, tol: float = 1e-15) -> float:
    """``P(chi2(delta, df) > x)`` as ``sum_j Pois(j; delta/2) P(chi2(df+2j) > x)``.

    Terms are summed outward from the Poisson mode until the remaining
    Poisson mass is below ``tol``.
    """
    if x < 0 or df <= 0 or delta < 0:
        raise ValueError("need x >= 0, df > 0 and delta >= 0")
    if x == 0:
        return 1.0
    lam = 0.5 * delta
    if lam == 0:
        return float(special.gammaincc(0.5 * df, 0.5 * x))
    mode = int(np.floor(lam))

    def weight(j):
        return np.exp(-lam + j * np.log(lam) - special.gammaln(j + 1))

    def term(j):
        return weight(j) * special.gammaincc(0.5 * df + j, 0.5 * x)

    total = 0.0
    mass = 0.0
    j = mode
    while j >= 0:
        w = weight(j)
        total += w * special.gammaincc(0.5 * df + j, 0.5 * x)
        mass += w
        if w < tol * 1e-3 and j < mode:
            break
        j -= 1
    j = mode + 1
    while 1.0 - mass > tol:
        w = weight(j)
        total += term(j)
        mass += w
        if w < tol * 1e-3:
            break
        j += 1
    return float(min(max(total, 0.0), 1.0))


def chi2_critical_value(df: int, level: float = 0.05) -> float:
    """Upper ``level`` quantile of the central chi-square."""
    return float(stats.chi2.isf(level, df))


# ---------------------------------------------------------------------------
# closed form

def _check_T(T, minimum=4):
    if int(T) != T or T < minimum:
        raise ValueError(f"T must be an integer >= {minimum}, got {T!r}")
    return int(T)


def delta_constant(T: int) -> Fraction:
    """``(2T-3) T (T-1) (T-2) / 72`` as an exact rational."""
    T = _check_T(T)
    return Fraction((2 * T - 3) * T * (T - 1) * (T - 2), 72)


def delta_qlm_tsh(T: int, e: float = 1.0):
    """Noncentrality ``e^4 (2T-3)T(T-1)(T-2)/72`` of the centered FE QLM test
    under ``rho = 1 - e N^{-1/4}``; exact when ``e`` is an int or Fraction."""
    if e <= 0:
        raise ValueError("e must be positive")
    d = delta_constant(T)
    if isinstance(e, (int, Fraction)):
        return d * Fraction(e) ** 4
    return float(d) * float(e) ** 4


def sandwich_delta(c, H, J, A=None):
    """``(A H^{-1} c)' (A H^{-1} J H^{-1} A')^{-1} (A H^{-1} c)``.

    Works in rational arithmetic for object arrays of Fractions.
    """
    c = np.asarray(c)
    exact = c.dtype == object
    dim = c.shape[0]
    if A is None:
        A = np.zeros((1, dim), dtype=object if exact else float)
        A[0, :] = Fraction(0) if exact else 0.0
        A[0, 0] = Fraction(1) if exact else 1.0
    Hi = inverse(np.asarray(H)) if exact else np.linalg.inv(H)
    v = A @ Hi @ c
    mid = A @ Hi @ J @ Hi.T @ A.T
    w = solve(mid, v) if exact else np.linalg.solve(mid, v)
    return v @ w


@dataclass(frozen=True)
class Theorem6Ingredients:
    """Exact limits for the rescaled FE likelihood at the unit root.

    With ``Stilde = diag(1/phi, 1, sigma^2)`` acting on ``(r, sv, s^2)``:
    ``c3`` is the limit of ``N^{-1/2} E[Stilde * score]`` at
    ``r = 1 - N^{-1/4}``, ``SH`` the limit of ``Stilde H Stilde`` and
    ``SJ`` that of ``Stilde J^c Stilde``. All entries are Fractions.
    """

    T: int
    c3: np.ndarray
    SH: np.ndarray
    SJ: np.ndarray

    @staticmethod
    def stilde(phi: float, sigma_sq: float = 1.0) -> np.ndarray:
        return np.diag([1.0 / phi, 1.0, sigma_sq])

    def delta(self):
        """Noncentrality of the centered QLM test (exact)."""
        return sandwich_delta(self.c3, self.SH, self.SJ)

    def delta_self_hessian(self):
        """The same sandwich with ``SJ`` in place of ``SH``."""
        return sandwich_delta(self.c3, self.SJ, self.SJ)


def theorem6_ingredients(T: int) -> Theorem6Ingredients:
    T = _check_T(T, 3)
    F = Fraction
    c3 = np.array([F(T * (T - 1) * (T * T - T + 1), 6), F(T * (2 * T - 1) * (T - 1), 12),
                   F(T * (T - 1), 4)], dtype=object)
    b = F(T * (2 * T * T - 3 * T + 1), 6)
    rest = [[b, F((T - 1) ** 2, 2), F(T - 1, 2)],
            [F(T * (T - 1), 2), F(T - 1, 2), F(T - 1, 2)]]
    SH = np.array([[F(T * (T - 1) * (T * T - T + 1), 2), b, F(T * (T - 1), 2)]] + rest,
                  dtype=object)
    SJ = SH.copy()
    SJ[0, 0] = F(T * (T - 1) * (T * T - T + 1), 3)
    return Theorem6Ingredients(T, c3, SH, SJ)


# ---------------------------------------------------------------------------
# GMM-AR and the maximal attainable power

def gmm_ar_moment_mean(T: int, e=1, exact: bool = True) -> np.ndarray:
    """Limit of ``N^{1/2}`` times the GMM-AR moment mean (per unit error
    variance) under ``rho = 1`` when testing ``rho = 1 - e N^{-1/4}``:
    ``P vech(diag(1, e^2, ..., e^2))`` at dimension T-1."""
    T = _check_T(T)
    n = T - 1
    one = Fraction(1) if exact else 1.0
    e2 = (Fraction(e) ** 2) if exact else float(e) ** 2
    diag = np.empty((n, n), dtype=object if exact else float)
    diag[...] = 0 * one
    diag[0, 0] = one
    for k in range(1, n):
        diag[k, k] = e2 * one
    return selector(n, exact).P @ vech(diag)


def _gmm_ar_covariance(T: int, exact: bool) -> np.ndarray:
    n = T - 1
    P = selector(n, exact).P
    return matmul(matmul(P, m_matrix(n, exact)), P.T)


def gmm_ar_delta(T: int, e=1, exact: bool = True):
    """``c1' (P M P')^{-1} c1`` with ``M = 2 Du+ (G kron G) Du+'`` at
    dimension T-1."""
    c1 = gmm_ar_moment_mean(T, e, exact)
    R = _gmm_ar_covariance(T, exact)
    return c1 @ (solve(R, c1) if exact else np.linalg.solve(R, c1))


def map_delta(T: int, e: float = 1.0, return_all: bool = False):
    """Largest root of ``|lambda R - c1 c1'| = 0``, by Cholesky whitening of
    ``R``; ``return_all`` also returns every generalized eigenvalue."""
    c1 = np.asarray(gmm_ar_moment_mean(T, e, exact=False), dtype=float)
    R = np.asarray(_gmm_ar_covariance(T, exact=False), dtype=float)
    L = np.linalg.cholesky(R)
    u = np.linalg.solve(L, c1)
    lam = np.linalg.eigvalsh(np.outer(u, u))
    if return_all:
        return float(lam[-1]), lam
    return float(lam[-1])


@dataclass(frozen=True)
class PowerCurve:
    """Rejection probabilities of a chi-square test with noncentrality
    ``delta(e)`` at level ``level``."""

    T: int
    variant: str
    e_grid: np.ndarray
    df: int
    delta: np.ndarray
    power: np.ndarray
    level: float = 0.05

    def rows(self):
        return [(float(e), float(d), self.df, float(p))
                for e, d, p in zip(self.e_grid, self.delta, self.power)]


_DF = {"qlm_c_tsh": lambda T: 1, "map": lambda T: 1,
       "gmm_ar": lambda T: T * (T - 1) // 2 - 2}


def power_curve(T: int, e_grid, variant: str = "qlm_c_tsh", level: float = 0.05) -> PowerCurve:
    """Power of the level-``level`` test over ``e_grid`` for one of
    ``qlm_c_tsh``, ``gmm_ar`` or ``map``."""
    T = _check_T(T)
    if variant not in _DF:
        raise ValueError(f"unknown variant {variant!r}")
    e_grid = np.atleast_1d(np.asarray(e_grid, dtype=float))
    if np.any(e_grid < 0):
        raise ValueError("e must be nonnegative")
    df = _DF[variant](T)
    if variant == "map":
        deltas = np.array([map_delta(T, e) if e > 0 else 0.0 for e in e_grid])
    else:
        deltas = float(delta_constant(T)) * e_grid ** 4
    crit = chi2_critical_value(df, level)
    power = np.array([noncentral_chi2_sf(crit, df, d) for d in deltas])
    return PowerCurve(T, variant, e_grid, df, deltas, power, level)


def gmm_ar_power(T: int, e: float = 1.0, level: float = 0.05) -> float:
    return float(power_curve(T, [e], "gmm_ar", level).power[0])


def qlm_c_power(T: int, e: float = 1.0, level: float = 0.05) -> float:
    return float(power_curve(T, [e], "qlm_c_tsh", level).power[0])


def map_curve(T: int, e_grid, level: float = 0.05) -> PowerCurve:
    """Maximal attainable power curve (one degree of freedom)."""
    return power_curve(T, e_grid, "map", level)


# ---------------------------------------------------------------------------
# numerical sandwich from the likelihood module

def sandwich_delta_at(T: int, phi: float, sigma_sq: float = 1.0, tsh: bool = False) -> float:
    """Finite-N noncentrality ``N (A H^{-1} m)^2 / (A H^{-1} J H^{-1} A')`` of
    the centered FE QLM test of ``rho = 1 - phi`` with ``N = phi^{-4}``,
    when the truth is the unit root with equal variances ``sigma_sq``.

    ``m`` is the exact expected score under the truth, ``H`` the expected
    Hessian at the hypothesized point and ``J`` the exact Gaussian
    covariance of the individual score, ``2 tr(A_k Phi0 A_l Phi0)``.
    """
    truth = theta_star(T, sigma_sq, "fe", tsh)
    k = 1 if tsh else T - 1
    te = ThetaN(1.0 - phi, 0.0, np.full(k, sigma_sq))
    m = expected_score(te, truth, 0.0, T)
    H = expected_hessian(te, None, T)
    Aq, _, Phi0 = score_quadratic_forms(te, truth, T)
    B = np.einsum("kab,bc->kac", Aq, Phi0)
    J = 2.0 * np.einsum("kab,lba->kl", B, B)
    Hi = np.linalg.inv(H)
    v = Hi[0] @ m
    return float(v * v / (Hi[0] @ J @ Hi[0]) / phi ** 4)


def delta_sandwich_general(T: int, sigma_sq: float = 1.0, tsh: bool = False,
                           phis=(4e-3, 2e-3, 1e-3)) -> float:
    """Limit of :func:`sandwich_delta_at` as ``phi -> 0``.

    The finite-N value has an expansion in powers of ``phi``; the limit is
    taken by polynomial (Richardson) extrapolation through ``phis``.
    """
    T = _check_T(T)
    phis = np.asarray(phis, dtype=float)
    vals = np.array([sandwich_delta_at(T, p, sigma_sq, tsh) for p in phis])
    coef = np.polyfit(phis, vals, len(phis) - 1)
    return float(coef[-1])


# ---------------------------------------------------------------------------
# verification report

@dataclass(frozen=True)
class CheckResult:
    name: str
    T: int
    passed: bool
    detail: str = ""


def _eq(a, b):
    return bool(np.all(np.asarray(a == b)))


def _close(a, b, tol):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.max(np.abs(a - b)) <= tol * max(1.0, float(np.max(np.abs(b)))))


def verify_lemmas(t_lo: int = 2, t_hi: int = 12, exact: bool = False,
                  tol: float = 1e-12) -> list[CheckResult]:
    """Structured-matrix lemmas and the eight trace identities.

    Integer identities are always checked exactly. Identities involving
    ``M^{-1}``, ``Pbar`` or a linear solve are checked in rational arithmetic
    when ``exact`` is true, otherwise in floating point to relative ``tol``.
    """
    out = []
    for T in range(max(2, t_lo), t_hi + 1):
        G, Gi = gt(T, True), gt_inverse(T, True)
        I = np.eye(T, dtype=int)
        out.append(CheckResult("G inverse closed form", T, _eq(G @ Gi, I)))
        out.append(CheckResult("G^-1 H = F - I", T, _eq(Gi @ ht(T, True), ft(T, True) - I)))
        out.append(CheckResult(
            "-6 G^-1 A = 2(T+1)F - 6G^-1 + (T+1)I", T,
            _eq(-6 * Gi @ at(T, True), 2 * (T + 1) * ft(T, True) - 6 * Gi + (T + 1) * I)))
        q = T * (T + 1) // 2
        e1 = np.zeros(q, dtype=int)
        e1[0] = 1
        A = at(T, exact)
        v = vec(A)
        ref_kron = Fraction((2 * T - 1) * (T + 1) * T * (T - 1), 36)
        ref_w = Fraction((2 * T - 1) * (T + 1) * T * (T - 1), 72)
        if exact:
            MMi = matmul(m_matrix(T, True), m_inverse(T, True))
            pv = matmul(pbar(T, True), vech(A))
            Gx = gt_inverse(T, True)
            kron = v @ matmul(np.kron(Gx, Gx), v)
            checks = [_eq(MMi, np.eye(q, dtype=int)), _eq(pv, vech(I) - e1), kron == ref_kron]
        else:
            MMi = m_matrix(T) @ m_inverse(T)
            pv = pbar(T) @ vech(A)
            Gx = gt_inverse(T)
            kron = v @ np.kron(Gx, Gx) @ v
            checks = [_close(MMi, np.eye(q), tol), _close(pv, vech(I) - e1, tol),
                      _close(kron, float(ref_kron), tol)]
        out.append(CheckResult("M inverse closed form", T, checks[0]))
        out.append(CheckResult("Pbar vech(A) = vech(I) - e1", T, checks[1]))
        out.append(CheckResult("vec(A)'(G^-1 kron G^-1)vec(A)", T, checks[2], f"{kron}"))
        if T >= 3:
            sel = selector(T, exact)
            w = vech(I)[2:]
            if exact:
                R = matmul(matmul(sel.P, m_matrix(T, True)), sel.P.T)
                lhs = w.astype(object) @ solve(R, w.astype(object))
                ok = lhs == ref_w
            else:
                R = sel.P @ m_matrix(T) @ sel.P.T
                lhs = w @ np.linalg.solve(R, w)
                ok = _close(lhs, float(ref_w), tol)
            out.append(CheckResult("w' R^-1 w", T, ok, f"{lhs}"))
            ti, tc = trace_identities(T, True), trace_identities_closed_form(T)
            for k, val in ti.as_dict().items():
                out.append(CheckResult(f"trace {k}", T, val == tc.as_dict()[k], f"{val}"))
    return out


def verify_deltas(t_lo: int = 4, t_hi: int = 10, tol: float = 1e-10) -> list[CheckResult]:
    """The noncentrality constant three ways: exact sandwich of the limit
    matrices, exact GMM-AR quadratic form, and the largest generalized
    eigenvalue (floating point, relative ``tol``)."""
    out = []
    for T in range(max(4, t_lo), t_hi + 1):
        d = delta_constant(T)
        d6 = theorem6_ingredients(T).delta()
        d7 = gmm_ar_delta(T)
        d8 = map_delta(T)
        out.append(CheckResult("delta: sandwich", T, d6 == d, f"{d6}"))
        out.append(CheckResult("delta: GMM-AR quadratic form", T, d7 == d, f"{d7}"))
        out.append(CheckResult("delta: largest generalized eigenvalue", T,
                               abs(d8 - float(d)) <= tol * max(1.0, float(d)), f"{d8!r}"))
    return out


def verify_constants(t_lo: int = 3, t_hi: int = 12, exact: bool = False) -> list[CheckResult]:
    """Lemma and trace checks over ``t_lo..t_hi`` followed by the three
    noncentrality routes for the ``T`` in that range between 4 and 10."""
    out = verify_lemmas(t_lo, t_hi, exact)
    lo, hi = max(4, t_lo), min(10, t_hi)
    if lo <= hi:
        out += verify_deltas(lo, hi)
    return out
