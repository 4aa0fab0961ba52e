import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from panelqlm.dgp import (
    DESIGNS,
    DgpConfig,
    PanelData,
    demean_time_effects,
    generate,
    read_csv,
    write_csv,
)


def test_noiseless_ns_panel_is_constant_at_the_effect():
    cfg = DgpConfig(N=50, T=5, rho=0.7, init_design="NS_Normal", noise_scale=0.0, seed=1)
    y = generate(cfg).y
    np.testing.assert_allclose(y, np.repeat(y[:, :1], 5, axis=1), atol=1e-14)
    assert np.std(y[:, 0]) > 0.5   # the effects themselves are random


def test_stationary_normal_initial_variance():
    cfg = DgpConfig(N=10**6, T=3, rho=0.5, sigma_mu_sq=0.0, seed=2)
    y = generate(cfg).y
    assert abs(np.var(y[:, 0]) - 4 / 3) < 0.01


def test_stationary_chisq_initial_skewness():
    cfg = DgpConfig(N=10**6, T=3, rho=0.3, sigma_mu_sq=0.0, init_design="S_ChiSq", seed=3)
    v1 = generate(cfg).y[:, 0]
    assert abs(stats.skew(v1) - 2 * np.sqrt(2)) < 0.05
    assert abs(np.var(v1) - 1 / (1 - 0.09)) < 0.02


@pytest.mark.parametrize("design", DESIGNS)
def test_error_variance_is_one(design):
    cfg = DgpConfig(N=200_000, T=4, rho=0.6, sigma_mu_sq=0.0, init_design=design, seed=4)
    y = generate(cfg).y
    eps = y[:, 1:] - 0.6 * y[:, :-1]
    assert abs(eps.var() - 1.0) < 0.02


@pytest.mark.parametrize("design", DESIGNS)
@pytest.mark.parametrize("rho", [0.2, 0.9])
def test_first_differences_have_mean_zero(design, rho):
    N, T = 10**5, 4
    cfg = DgpConfig(N=N, T=T, rho=rho, init_design=design, seed=5)
    dy = np.diff(generate(cfg).y, axis=1)
    assert abs(dy.mean()) < 4 / np.sqrt(N * T)


def test_same_seed_gives_identical_panel():
    cfg = DgpConfig(N=30, T=4, rho=0.5, seed=99, replication=3)
    assert np.array_equal(generate(cfg).y, generate(cfg).y)


def test_replications_give_different_streams():
    a = generate(DgpConfig(N=30, T=4, rho=0.5, seed=99, replication=0)).y
    b = generate(DgpConfig(N=30, T=4, rho=0.5, seed=99, replication=1)).y
    assert not np.allclose(a, b)
    assert abs(np.corrcoef(a.ravel(), b.ravel())[0, 1]) < 0.3


@pytest.mark.parametrize("kw", [
    dict(rho=1.0),                                    # stationary design at unit root
    dict(rho=0.5, init_design="bogus"),
    dict(rho=0.5, init_design="S_Normal", error_dist="chisq1_standardized"),
    dict(rho=0.5, N=1),
    dict(rho=0.5, T=2),
    dict(rho=1.5, init_design="NS_Normal"),
])
def test_invalid_configs_raise(kw):
    base = dict(N=10, T=4)
    base.update(kw)
    with pytest.raises(ValueError):
        DgpConfig(**base)


def test_unit_root_allowed_for_ns_design():
    y = generate(DgpConfig(N=10, T=4, rho=1.0, init_design="NS_Normal")).y
    assert y.shape == (10, 4)


def test_remove_time_effects_flag():
    y = generate(DgpConfig(N=40, T=4, rho=0.5, remove_time_effects=True, seed=7)).y
    assert np.max(np.abs(y.mean(axis=0))) < 1e-14


# ---------------------------------------------------------------------------
# time-effect removal

def test_demean_identical_rows_gives_zero():
    y = np.tile([1.0, 2.0, 3.0, 4.0], (5, 1))
    np.testing.assert_array_equal(demean_time_effects(PanelData(y)).y, 0.0)


@given(st.integers(0, 10_000))
def test_demean_is_idempotent(seed):
    y = np.random.default_rng(seed).normal(size=(20, 4))
    once = demean_time_effects(PanelData(y)).y
    twice = demean_time_effects(PanelData(once)).y
    np.testing.assert_allclose(twice, once, atol=1e-15)


def test_demean_column_means_vanish():
    y = np.random.default_rng(8).normal(5.0, 3.0, size=(100, 4))
    assert np.max(np.abs(demean_time_effects(PanelData(y)).y.mean(axis=0))) < 1e-14


def test_demean_needs_two_individuals():
    with pytest.raises(ValueError):
        demean_time_effects(np.ones((1, 4)))


# ---------------------------------------------------------------------------
# CSV interchange

@pytest.mark.parametrize("wide", [False, True])
def test_csv_round_trip_is_lossless(wide, tmp_path):
    data = generate(DgpConfig(N=7, T=5, rho=0.4, seed=11))
    path = tmp_path / "panel.csv"
    write_csv(data, path, wide=wide)
    back = read_csv(path, wide=wide)
    assert np.array_equal(back.y, data.y)


def test_long_csv_accepts_any_row_order():
    text = "id,t,y\nb,2,4\na,1,1\na,2,2\nb,1,3\na,3,5\nb,3,6\n"
    y = read_csv(text).y
    np.testing.assert_array_equal(y, [[3, 4, 6], [1, 2, 5]])


@pytest.mark.parametrize("text", [
    "a,b,c\n1,1,1\n",                 # wrong header
    "id,t,y\n1,1,0\n1,2,0\n2,1,0\n",  # unbalanced
    "",
])
def test_malformed_csv_raises(text):
    with pytest.raises(ValueError):
        read_csv(text)


def test_panel_rejects_non_finite():
    with pytest.raises(ValueError):
        PanelData(np.array([[1.0, np.nan, 2.0]]))


def test_panel_is_read_only():
    p = PanelData(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        p.y[0, 0] = 1.0
