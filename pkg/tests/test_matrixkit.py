from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from panelqlm.matrixkit import (
    at,
    band_matrix,
    diff_matrix,
    duplication,
    ft,
    gt,
    gt_inverse,
    ht,
    inverse,
    lag_filter,
    m_inverse,
    m_matrix,
    matmul,
    pbar,
    selector,
    solve,
    trace_identities,
    trace_identities_closed_form,
    tridiag,
    unvech,
    vec,
    vech,
    within_matrix,
)


# ---------------------------------------------------------------------------
# tridiagonal family

@pytest.mark.parametrize("args, expected", [
    ((3, 1, 2, -1), [[1, -1, 0], [-1, 2, -1], [0, -1, 2]]),
    ((1, 5, 9, 9), [[5]]),
    ((4, 0, -2, 1), [[0, 1, 0, 0], [1, -2, 1, 0], [0, 1, -2, 1], [0, 0, 1, -2]]),
])
def test_tridiag_examples(args, expected):
    np.testing.assert_array_equal(tridiag(*args), np.array(expected, dtype=float))


@pytest.mark.parametrize("n", [0, -1, 2.5])
def test_tridiag_rejects_bad_dimension(n):
    with pytest.raises(ValueError):
        tridiag(n, 1, 2, -1)


def test_ht_is_tridiag_0_m2_1():
    np.testing.assert_array_equal(ht(4), tridiag(4, 0, -2, 1))


@pytest.mark.parametrize("T, expected", [
    (3, [[3, 2, 1], [2, 2, 1], [1, 1, 1]]),
    (2, [[2, 1], [1, 1]]),
])
def test_gt_inverse_examples(T, expected):
    np.testing.assert_array_equal(gt_inverse(T), np.array(expected, dtype=float))


@pytest.mark.parametrize("T", range(2, 13))
def test_gt_inverse_is_exact_inverse(T):
    prod = gt_inverse(T, exact=True) @ gt(T, exact=True)
    assert np.all(prod == np.eye(T, dtype=int))


def test_gt_inverse_rejects_small_T():
    with pytest.raises(ValueError):
        gt_inverse(1)


@pytest.mark.parametrize("T", range(2, 13))
def test_gt_inverse_identities_exact(T):
    Gi = gt_inverse(T, True)
    I = np.eye(T, dtype=int)
    F = ft(T, True)
    assert np.all(Gi @ ht(T, True) == F - I)
    assert np.all(-6 * Gi @ at(T, True) == 2 * (T + 1) * F - 6 * Gi + (T + 1) * I)


# ---------------------------------------------------------------------------
# vectorization and duplication

def test_vech_2x2():
    np.testing.assert_array_equal(vech(np.array([[1, 2], [2, 3]])), [1, 2, 3])


def test_vec_is_column_major():
    A = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(vec(A), [1, 3, 2, 4])


def _symmetric(n):
    return arrays(np.float64, (n, n), elements=st.floats(-10, 10, allow_nan=False)).map(
        lambda a: a + a.T)


@given(_symmetric(5))
def test_unvech_round_trip(A):
    np.testing.assert_array_equal(unvech(vech(A)), A)


@given(_symmetric(2))
def test_duplication_maps_vech_to_vec(A):
    dp = duplication(2)
    np.testing.assert_allclose(dp.Du @ vech(A), vec(A))


@given(st.integers(1, 7))
def test_duplication_left_inverse(n):
    dp = duplication(n, exact=True)
    q = n * (n + 1) // 2
    assert np.all(matmul(dp.Du_plus, dp.Du) == np.eye(q, dtype=int))


def test_duplication_rows_n2():
    Du = duplication(2).Du
    # rows of vec(A) = (a11, a21, a12, a22) select vech entries (a11, a21, a22)
    np.testing.assert_array_equal(Du, [[1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1]])


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.ones(3)])
def test_vech_rejects_non_square(bad):
    with pytest.raises(ValueError):
        vech(bad)


def test_unvech_rejects_non_triangular_length():
    with pytest.raises(ValueError):
        unvech(np.ones(4))


# ---------------------------------------------------------------------------
# M, selector and Pbar

@pytest.mark.parametrize("T", [2, 3, 4, 6])
def test_m_matrix_closed_form_inverse(T):
    q = T * (T + 1) // 2
    assert np.all(matmul(m_matrix(T, True), m_inverse(T, True)) == np.eye(q, dtype=int))


@pytest.mark.parametrize("T", range(2, 9))
def test_selector_annihilates_vech_G(T):
    sel = selector(T, exact=True)
    assert sel.p == T * (T + 1) // 2 - 2
    assert np.all(sel.P @ vech(gt(T, True)) == 0)
    np.testing.assert_array_equal(vech(gt(T))[:2], [1, -1])


@pytest.mark.parametrize("T", range(2, 11))
def test_pbar_maps_vech_A_to_identity_less_e1(T):
    q = T * (T + 1) // 2
    e1 = np.zeros(q, dtype=int)
    e1[0] = 1
    lhs = matmul(pbar(T, True), vech(at(T, True)))
    assert np.all(lhs == vech(np.eye(T, dtype=int)) - e1)


@pytest.mark.parametrize("T", range(2, 11))
def test_vec_A_kron_quadratic_form(T):
    v = vec(at(T, True))
    Gi = gt_inverse(T, True)
    assert v @ matmul(np.kron(Gi, Gi), v) == Fraction((2 * T - 1) * (T + 1) * T * (T - 1), 36)


@pytest.mark.parametrize("T", range(3, 11))
def test_selected_m_inverse_quadratic_form(T):
    sel = selector(T, True)
    R = matmul(matmul(sel.P, m_matrix(T, True)), sel.P.T)
    w = vech(np.eye(T, dtype=int))[2:].astype(object)
    assert w @ solve(R, w) == Fraction((2 * T - 1) * (T + 1) * T * (T - 1), 72)


# ---------------------------------------------------------------------------
# panel matrices

@pytest.mark.parametrize("T", range(3, 13))
def test_within_matrix_is_projection(T):
    Q = within_matrix(T)
    D = diff_matrix(T)
    np.testing.assert_allclose(Q @ Q, Q, atol=1e-13)
    np.testing.assert_allclose(Q, Q.T)
    assert np.linalg.matrix_rank(Q) == T - 2
    assert np.max(np.abs(Q - D.T @ np.linalg.solve(D @ D.T, D))) < 1e-12


def test_diff_matrix_annihilates_ones():
    np.testing.assert_array_equal(diff_matrix(6) @ np.ones(5), 0)


@given(st.integers(3, 8), st.floats(-0.99, 0.99))
def test_band_matrix_inverts_lag_filter(T, r):
    # (I - r L)^{-1} = I + r * lag_filter
    B = band_matrix(T, r)
    np.testing.assert_allclose(B @ (np.eye(T - 1) + r * lag_filter(T, r)), np.eye(T - 1),
                               atol=1e-12)


# ---------------------------------------------------------------------------
# trace identities

T4 = {"tr_PtQP": Fraction(4, 3), "tr_QP": -1, "iPtPi": 5, "iPi": 3,
      "tr_PtP": 3, "tr_PtPPtP": 7, "tr_QPQP": Fraction(1, 3), "tr_PtPQP": Fraction(-5, 3)}


@pytest.mark.parametrize("name", sorted(T4))
def test_trace_identities_T4(name):
    assert trace_identities(4, exact=True).as_dict()[name] == T4[name]


@pytest.mark.parametrize("T", range(3, 13))
def test_trace_identities_match_closed_forms(T):
    num = trace_identities(T).as_dict()
    ref = trace_identities_closed_form(T).as_dict()
    for k in ref:
        assert abs(num[k] - float(ref[k])) <= 1e-12 * max(1.0, abs(float(ref[k]))), k


def test_trace_identities_reject_small_T():
    with pytest.raises(ValueError):
        trace_identities(2)


# ---------------------------------------------------------------------------
# exact linear algebra

@given(st.integers(1, 5), st.integers(0, 10_000))
def test_exact_inverse_matches_float(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(-5, 6, size=(n, n)) + 8 * np.eye(n, dtype=int)
    Ax = np.vectorize(Fraction, otypes=[object])(A)
    Ai = inverse(Ax)
    assert np.all(matmul(Ax, Ai) == np.eye(n, dtype=int))
    np.testing.assert_allclose(Ai.astype(float), np.linalg.inv(A), atol=1e-12)
