import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvtest.combine import (
    SIGMA_FLOOR,
    StatMatrix,
    _all_loo_moments,
    aggregate_test,
    cauchy_combine,
    leave_one_out_moments,
    per_class_pvalues,
)
from fvtest.errors import EmptyInput, InsufficientBootstrap


def test_loo_constant_column():
    T = np.full((6, 1), 2.5)
    mu, sigma = leave_one_out_moments(T, 3)
    assert mu[0] == 2.5
    assert sigma[0] == SIGMA_FLOOR * 3.5


def test_loo_two_point():
    mu, sigma = leave_one_out_moments(np.array([[0.0], [1.0], [2.0]]), 1)
    assert mu[0] == 1.0 and sigma[0] == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_loo_needs_two_draws():
    with pytest.raises(InsufficientBootstrap):
        leave_one_out_moments(np.zeros((2, 3)), 0)


def test_loo_vectorized_matches_exclusion_loop():
    rng = np.random.default_rng(0)
    T = rng.gamma(2.0, 3.0, size=(41, 5)) + 100.0
    B = T.shape[0] - 1
    mu_all, sd_all = _all_loo_moments(T)
    for b in range(B + 1):
        rows = [T[i] for i in range(B + 1) if i != b]
        mu = sum(rows) / B
        sd = np.sqrt(sum((r - mu) ** 2 for r in rows) / (B - 1))
        np.testing.assert_allclose(mu_all[b], mu, rtol=0, atol=1e-12 * np.abs(T).max())
        np.testing.assert_allclose(sd_all[b], sd, rtol=0, atol=1e-12 * np.abs(T).max())
        m2, s2 = leave_one_out_moments(T, b)
        np.testing.assert_allclose(m2, mu, atol=1e-12 * np.abs(T).max())
        np.testing.assert_allclose(s2, sd, atol=1e-12 * np.abs(T).max())


def test_aggregate_identical_rows():
    T = np.tile([1.0, 2.0, 3.0], (11, 1))
    assert aggregate_test(StatMatrix(T)).p_aggregate == 1.0


def test_aggregate_B1_raises():
    with pytest.raises(InsufficientBootstrap):
        aggregate_test(StatMatrix(np.zeros((2, 2))))


def test_aggregate_extreme_row0():
    rng = np.random.default_rng(1)
    T = rng.normal(size=(51, 3))
    T[0] = 100.0
    assert aggregate_test(StatMatrix(T)).p_aggregate == 1 / 51


def test_aggregate_definition():
    rng = np.random.default_rng(2)
    T = rng.normal(size=(31, 4))
    res = aggregate_test(StatMatrix(T))
    Q = []
    for b in range(31):
        mu, sd = leave_one_out_moments(T, b)
        Q.append(np.mean(((T[b] - mu) / sd) ** 2))
    assert res.Q0 == pytest.approx(Q[0], rel=1e-10)
    np.testing.assert_allclose(res.Qb, Q[1:], rtol=1e-10)
    assert res.p_aggregate == (1 + np.sum(res.Qb >= res.Q0)) / 31
    np.testing.assert_array_equal(res.per_class_p, per_class_pvalues(T))


def test_aggregate_affine_invariance():
    rng = np.random.default_rng(3)
    T = rng.exponential(size=(81, 4))
    a = np.array([-3.0, 0.0, 5.0, 1e3])
    b = np.array([2.0, 0.5, 7.0, 1e-2])
    p1 = aggregate_test(StatMatrix(T)).p_aggregate
    p2 = aggregate_test(StatMatrix(a + b * T)).p_aggregate
    assert p1 == p2


def test_aggregate_row_permutation_invariance():
    rng = np.random.default_rng(4)
    T = rng.normal(size=(61, 3))
    perm = np.concatenate([[0], 1 + rng.permutation(60)])
    assert aggregate_test(StatMatrix(T)).p_aggregate == aggregate_test(StatMatrix(T[perm])).p_aggregate


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_aggregate_p_lower_bound(B, L, seed):
    T = np.random.default_rng(seed).normal(size=(B + 1, L))
    p = aggregate_test(StatMatrix(T)).p_aggregate
    assert 1 / (B + 1) <= p <= 1


def test_exchangeable_null_validity():
    rng = np.random.default_rng(5)
    B = 100
    ps = np.array([aggregate_test(StatMatrix(rng.chisquare(3, size=(B + 1, 4)))).p_aggregate for _ in range(500)])
    assert np.mean(ps <= 0.05) <= 0.08


def test_stat_matrix_checks():
    with pytest.raises(ValueError):
        StatMatrix(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        StatMatrix(np.array([[0.0], [np.nan]]))
    sm = StatMatrix(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        sm.T[0, 0] = 1.0


@pytest.mark.parametrize("p", [0.3, 0.001, 0.05, 0.5, 0.9])
def test_cauchy_fixed_point(p):
    assert cauchy_combine([p]) == pytest.approx(p, abs=1e-12)
    assert cauchy_combine([p] * 7) == pytest.approx(p, abs=1e-12)


def test_cauchy_high_precision_oracle():
    mpmath.mp.dps = 50
    S = (mpmath.tan((mpmath.mpf("0.5") - mpmath.mpf("0.01")) * mpmath.pi) + 0) / 2
    ref = float(mpmath.mpf("0.5") - mpmath.atan(S) / mpmath.pi)
    assert cauchy_combine([0.01, 0.5]) == pytest.approx(ref, abs=1e-10)


def test_cauchy_weights_and_errors():
    assert cauchy_combine([0.01, 0.5], weights=[1.0, 0.0]) == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(EmptyInput):
        cauchy_combine([])
    with pytest.raises(ValueError):
        cauchy_combine([0.1, 0.2], weights=[0.7, 0.7])


def test_cauchy_clipping_extremes():
    assert 0 < cauchy_combine([0.0, 0.5]) < 1e-9
    assert cauchy_combine([1.0]) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=8), st.integers(0, 7), st.floats(0.0, 1.0))
def test_cauchy_monotone(ps, idx, frac):
    idx = idx % len(ps)
    lower = list(ps)
    lower[idx] = ps[idx] * frac
    assert cauchy_combine(lower) <= cauchy_combine(ps) + 1e-15
