"""
Structured matrices for the panel AR(1) model.

Differencing, within-projection, lag-filter, band, tridiagonal, duplication
and selector matrices, plus vec/vech utilities. Every constructor accepts
``exact=True`` to return an object array of :class:`fractions.Fraction`
entries, so that the closed-form identities can be checked in rational
arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "tridiag",
    "gt",
    "gt_inverse",
    "ht",
    "at",
    "ft",
    "vec",
    "vech",
    "unvech",
    "duplication",
    "DuplicationPair",
    "diff_matrix",
    "within_matrix",
    "lag_filter",
    "band_matrix",
    "StructuredPanelMatrices",
    "structured_matrices",
    "SelectorP",
    "selector",
    "m_matrix",
    "m_inverse",
    "z_matrix",
    "pbar",
    "TraceIdentities",
    "trace_identities",
    "trace_identities_closed_form",
    "solve",
    "inverse",
    "matmul",
]


def _zeros(shape, exact: bool):
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape)


def _eye(n: int, exact: bool):
    out = _zeros((n, n), exact)
    for i in range(n):
        out[i, i] = Fraction(1) if exact else 1.0
    return out


def _num(x, exact: bool):
    return Fraction(x) if exact else float(x)


def tridiag(n: int, a, b, c, exact: bool = False) -> np.ndarray:
    """Symmetric tridiagonal matrix with corner ``a``, diagonal ``b`` and
    off-diagonal ``c``.

    Entry (1,1) is ``a``, entries (i,i) for i >= 2 are ``b`` and entries
    (i,i+1), (i+1,i) are ``c``.

    Examples
    --------
    >>> tridiag(3, 1, 2, -1)
    array([[ 1., -1.,  0.],
           [-1.,  2., -1.],
           [ 0., -1.,  2.]])
    """
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n!r}")
    n = int(n)
    out = _zeros((n, n), exact)
    a, b, c = _num(a, exact), _num(b, exact), _num(c, exact)
    for i in range(n):
        out[i, i] = b
        if i + 1 < n:
            out[i, i + 1] = c
            out[i + 1, i] = c
    out[0, 0] = a
    return out


def gt(T: int, exact: bool = False) -> np.ndarray:
    """``G_T = tridiag(T, 1, 2, -1)``, i.e. ``D1 D1'`` for the bidiagonal
    first-difference filter ``D1``."""
    return tridiag(T, 1, 2, -1, exact=exact)


def gt_inverse(T: int, exact: bool = False) -> np.ndarray:
    """Closed-form inverse of :func:`gt`: entry (i, j) equals
    ``T + 1 - max(i, j)`` (1-based)."""
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    idx = np.arange(1, T + 1)
    vals = T + 1 - np.maximum.outer(idx, idx)
    if exact:
        return np.vectorize(Fraction, otypes=[object])(vals)
    return vals.astype(float)


def ht(T: int, exact: bool = False) -> np.ndarray:
    """``H_T = tridiag(T, 0, -2, 1)``."""
    return tridiag(T, 0, -2, 1, exact=exact)


def at(T: int, exact: bool = False) -> np.ndarray:
    """``A_T = tridiag(T, -(T-1)/2, -(T-2)/3, (T+1)/6)``."""
    return tridiag(
        T,
        Fraction(-(T - 1), 2),
        Fraction(-(T - 2), 3),
        Fraction(T + 1, 6),
        exact=exact,
    )


def ft(T: int, exact: bool = False) -> np.ndarray:
    """``F_T = (T, T-1, ..., 1)' e_1'``: the first column counts down from
    T, all other columns are zero."""
    out = _zeros((T, T), exact)
    for i in range(T):
        out[i, 0] = _num(T - i, exact)
    return out


# ---------------------------------------------------------------------------
# vectorization

def vec(A: np.ndarray) -> np.ndarray:
    """Column-major stacking of ``A``."""
    A = np.asarray(A)
    return A.reshape(-1, order="F")


def _check_square(A: np.ndarray) -> int:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A.shape[0]


def vech(A: np.ndarray) -> np.ndarray:
    """Half-vectorization: lower triangle stacked column by column.

    >>> vech(np.array([[1, 2], [2, 3]]))
    array([1, 2, 3])
    """
    A = np.asarray(A)
    n = _check_square(A)
    rows, cols = np.triu_indices(n)  # (col, row) pairs of the lower triangle
    return A[cols, rows]


def _vech_order(n: int):
    # row/col indices of the lower triangle, in vech order
    cols, rows = np.triu_indices(n)
    return rows, cols


def unvech(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vech` for symmetric matrices."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError("unvech expects a 1-d vector")
    m = v.shape[0]
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise ValueError(f"length {m} is not a triangular number")
    out = np.empty((n, n), dtype=v.dtype)
    rows, cols = _vech_order(n)
    out[rows, cols] = v
    out[cols, rows] = v
    return out


@dataclass(frozen=True)
class DuplicationPair:
    """Duplication matrix ``Du`` with ``Du @ vech(A) = vec(A)`` and its
    Moore-Penrose inverse ``Du_plus = (Du'Du)^{-1} Du'``."""

    n: int
    Du: np.ndarray
    Du_plus: np.ndarray


def duplication(n: int, exact: bool = False) -> DuplicationPair:
    """Duplication matrix of order ``n`` and its left inverse."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    q = n * (n + 1) // 2
    Du = _zeros((n * n, q), exact)
    Dp = _zeros((q, n * n), exact)
    one = _num(1, exact)
    half = _num(Fraction(1, 2), exact)
    rows, cols = _vech_order(n)
    for k, (i, j) in enumerate(zip(rows, cols)):
        Du[j * n + i, k] = one
        Du[i * n + j, k] = one
        if i == j:
            Dp[k, j * n + i] = one
        else:
            Dp[k, j * n + i] = half
            Dp[k, i * n + j] = half
    return DuplicationPair(n, Du, Dp)


# ---------------------------------------------------------------------------
# panel matrices (dimension T-1 unless noted)

def _check_T(T: int, minimum: int = 3) -> int:
    if int(T) != T or T < minimum:
        raise ValueError(f"T must be an integer >= {minimum}, got {T!r}")
    return int(T)


def diff_matrix(T: int, exact: bool = False) -> np.ndarray:
    """(T-2) x (T-1) first-difference matrix; annihilates the ones vector."""
    T = _check_T(T)
    out = _zeros((T - 2, T - 1), exact)
    for i in range(T - 2):
        out[i, i] = _num(-1, exact)
        out[i, i + 1] = _num(1, exact)
    return out


def within_matrix(T: int, exact: bool = False) -> np.ndarray:
    """``Q = I - ii'/(T-1)``, the (T-1)-dimensional within projection."""
    T = _check_T(T)
    n = T - 1
    out = _eye(n, exact)
    w = _num(Fraction(1, n), exact)
    return out - w if exact else out - 1.0 / n


def lag_filter(T: int, rho, exact: bool = False) -> np.ndarray:
    """Lower-triangular lag filter with entry (i, j) = rho**(i-j-1) for
    i > j. Maps the innovations of (y_2..y_T) - y_1 to their first lags."""
    T = _check_T(T, 2)
    n = T - 1
    out = _zeros((n, n), exact)
    r = _num(rho, exact)
    for i in range(n):
        for j in range(i):
            out[i, j] = r ** (i - j - 1)
    return out


def band_matrix(T: int, r, exact: bool = False) -> np.ndarray:
    """(T-1) x (T-1) quasi-differencing band: 1 on the diagonal, -r below."""
    T = _check_T(T, 2)
    n = T - 1
    out = _eye(n, exact)
    rr = _num(r, exact)
    for i in range(n - 1):
        out[i + 1, i] = -rr
    return out


@dataclass(frozen=True)
class StructuredPanelMatrices:
    T: int
    D: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    Dr: np.ndarray
    iota: np.ndarray


def structured_matrices(T: int, rho: float = 1.0, r: float = 1.0,
                        exact: bool = False) -> StructuredPanelMatrices:
    """Bundle of the panel matrices at lag rate ``rho`` and band rate ``r``."""
    T = _check_T(T)
    iota = np.array([_num(1, exact)] * (T - 1), dtype=object if exact else float)
    return StructuredPanelMatrices(
        T=T,
        D=diff_matrix(T, exact),
        Q=within_matrix(T, exact),
        P=lag_filter(T, rho, exact),
        Dr=band_matrix(T, r, exact),
        iota=iota,
    )


# ---------------------------------------------------------------------------
# selector and the matrices of the moment-based noncentrality

@dataclass(frozen=True)
class SelectorP:
    """``P = (0, g, I_p)`` with ``(1, -1, g')' = vech(G_T)``."""

    T: int
    P: np.ndarray
    g: np.ndarray

    @property
    def p(self) -> int:
        return self.P.shape[0]


def selector(T: int, exact: bool = False) -> SelectorP:
    """Selector for a T x T symmetric matrix; ``P @ vech(G_T) = 0``."""
    T = _check_T(T, 2)
    q = T * (T + 1) // 2
    p = q - 2
    g = vech(gt(T, exact))[2:]
    P = _zeros((p, q), exact)
    P[:, 1] = g
    P[:, 2:] = _eye(p, exact)
    return SelectorP(T, P, g)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product that skips zero entries for object (rational) arrays;
    plain ``@`` otherwise."""
    if A.dtype != object and B.dtype != object:
        return A @ B
    vec_rhs = B.ndim == 1
    B2 = B.reshape(B.shape[0], -1)
    brows = [[(j, B2[k, j]) for j in range(B2.shape[1]) if B2[k, j] != 0]
             for k in range(B2.shape[0])]
    out = _zeros((A.shape[0], B2.shape[1]), True)
    for i in range(A.shape[0]):
        acc = {}
        for k in range(A.shape[1]):
            a = A[i, k]
            if a == 0:
                continue
            for j, b in brows[k]:
                acc[j] = acc.get(j, 0) + a * b
        for j, v in acc.items():
            out[i, j] = Fraction(v)
    return out[:, 0] if vec_rhs else out


def m_matrix(T: int, exact: bool = False) -> np.ndarray:
    """``M_T = 2 Du+ (G_T kron G_T) Du+'``."""
    dp = duplication(T, exact)
    G = gt(T, exact)
    return 2 * matmul(matmul(dp.Du_plus, np.kron(G, G)), dp.Du_plus.T)


def m_inverse(T: int, exact: bool = False) -> np.ndarray:
    """Closed-form inverse ``(1/2) Du' (G_T^{-1} kron G_T^{-1}) Du``."""
    dp = duplication(T, exact)
    Gi = gt_inverse(T, exact)
    half = Fraction(1, 2) if exact else 0.5
    return half * matmul(matmul(dp.Du.T, np.kron(Gi, Gi)), dp.Du)


def z_matrix(T: int, exact: bool = False) -> np.ndarray:
    """``Z_T = [[1, 0, 0'], [0, 1, -g']]``."""
    sel = selector(T, exact)
    q = T * (T + 1) // 2
    Z = _zeros((2, q), exact)
    Z[0, 0] = _num(1, exact)
    Z[1, 1] = _num(1, exact)
    Z[1, 2:] = -sel.g
    return Z


def pbar(T: int, exact: bool = False) -> np.ndarray:
    """Stacked ``[Z_T M_T^{-1}; P_T]`` (square of order T(T+1)/2)."""
    return np.vstack([matmul(z_matrix(T, exact), m_inverse(T, exact)),
                      selector(T, exact).P])


# ---------------------------------------------------------------------------
# dense solves, exact or floating

def solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b``; Gauss-Jordan in rational arithmetic for object
    arrays, LAPACK otherwise."""
    if A.dtype != object:
        return np.linalg.solve(A, b)
    n = A.shape[0]
    vec_rhs = b.ndim == 1
    B = b.reshape(n, -1)
    M = np.concatenate([A.copy(), B.copy()], axis=1)
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r, col] != 0), None)
        if piv is None:
            raise np.linalg.LinAlgError("singular matrix")
        if piv != col:
            M[[col, piv]] = M[[piv, col]]
        M[col] = M[col] / M[col, col]
        for r in range(n):
            if r != col and M[r, col] != 0:
                M[r] = M[r] - M[r, col] * M[col]
    x = M[:, n:]
    return x[:, 0] if vec_rhs else x


def inverse(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    return solve(A, _eye(n, A.dtype == object))


# ---------------------------------------------------------------------------
# trace identities at rho = 1

@dataclass(frozen=True)
class TraceIdentities:
    tr_PtQP: object
    tr_QP: object
    iPtPi: object
    iPi: object
    tr_PtP: object
    tr_PtPPtP: object
    tr_QPQP: object
    tr_PtPQP: object

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def trace_identities(T: int, exact: bool = False) -> TraceIdentities:
    """Eight traces/quadratic forms of the unit-rate lag filter and the
    within matrix, computed from the materialized matrices."""
    T = _check_T(T)
    P = lag_filter(T, 1, exact)
    Q = within_matrix(T, exact)
    i = np.array([_num(1, exact)] * (T - 1), dtype=object if exact else float)
    PtP = P.T @ P
    QP = Q @ P
    return TraceIdentities(
        tr_PtQP=np.trace(P.T @ Q @ P),
        tr_QP=np.trace(QP),
        iPtPi=i @ PtP @ i,
        iPi=i @ P @ i,
        tr_PtP=np.trace(PtP),
        tr_PtPPtP=np.trace(PtP @ PtP),
        tr_QPQP=np.trace(QP @ QP),
        tr_PtPQP=np.trace(PtP @ QP),
    )


def trace_identities_closed_form(T: int) -> TraceIdentities:
    """Closed-form polynomials in T for :func:`trace_identities`."""
    T = _check_T(T)
    F = Fraction
    return TraceIdentities(
        tr_PtQP=F((T - 2) * T, 6),
        tr_QP=F(-(T - 2), 2),
        iPtPi=F((T - 2) * (T - 1) * (2 * T - 3), 6),
        iPi=F((T - 2) * (T - 1), 2),
        tr_PtP=F((T - 2) * (T - 1), 2),
        tr_PtPPtP=F((T - 2) * (T - 1) * (T * T - 3 * T + 3), 6),
        tr_QPQP=F(-(T - 2) * (T - 6), 12),
        tr_PtPQP=F(-(T - 2) * T * (T + 1), 24),
    )
