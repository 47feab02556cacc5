import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmbvs.composition import balance, balances_all, close, ilr_basis, sbp, zero_replace
from cmbvs.errors import ConfigurationError, DegenerateInputError, DimensionError, DomainError


def contrast_rows(J):
    """Independent oracle: a_k written out entry by entry for identity order."""
    A = np.zeros((J - 1, J))
    for k in range(1, J):
        s = math.sqrt((J - k) / (J - k + 1))
        A[k - 1, k - 1] = s
        A[k - 1, k:] = -s / (J - k)
    return A


positive_rows = arrays(np.float64, st.integers(2, 12),
                       elements=st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False))


def test_close_examples():
    np.testing.assert_allclose(close([2, 2, 4]), [0.25, 0.25, 0.5])
    np.testing.assert_allclose(close([1]), [1.0])
    with pytest.raises(DegenerateInputError):
        close([0, 0, 0])
    with pytest.raises(DomainError):
        close([1, -1, 2])


def test_close_rows():
    out = close(np.array([[1.0, 3.0], [2.0, 2.0]]))
    np.testing.assert_allclose(out, [[0.25, 0.75], [0.5, 0.5]])


def test_zero_replace_examples():
    np.testing.assert_allclose(zero_replace([0.6, 0.4, 0.0], 0.01), [0.594, 0.396, 0.01], atol=1e-15)
    np.testing.assert_allclose(zero_replace([0.5, 0.5], 0.01), [0.5, 0.5])
    np.testing.assert_allclose(zero_replace([0.0, 1.0], 0.5), [0.5, 0.5])


def test_zero_replace_rejects_large_delta():
    with pytest.raises(ConfigurationError):
        zero_replace([0.0, 0.0, 1.0], 0.5)
    with pytest.raises(ConfigurationError):
        zero_replace([0.0, 1.0], 0.0)


def test_zero_replace_per_row_delta():
    psi = np.array([[0.0, 1.0], [0.5, 0.5]])
    out = zero_replace(psi, np.array([0.1, 0.2]))
    np.testing.assert_allclose(out, [[0.1, 0.9], [0.5, 0.5]])


@given(arrays(np.float64, st.integers(2, 10), elements=st.sampled_from([0.0, 0.1, 1.0, 2.5, 7.0])),
       st.floats(1e-4, 0.05))
def test_zero_replace_keeps_sum_and_order(raw, delta):
    if raw.sum() == 0:
        raw = raw.copy()
        raw[0] = 1.0
    psi = close(raw)
    out = zero_replace(psi, delta)
    assert abs(out.sum() - 1.0) < 1e-12
    nz = psi > 0
    assert np.array_equal(np.argsort(psi[nz], kind="stable"), np.argsort(out[nz], kind="stable"))


def test_sbp_examples():
    np.testing.assert_array_equal(sbp(3).eta, [[1, -1, -1], [0, 1, -1]])
    np.testing.assert_array_equal(sbp(2).eta, [[1, -1]])
    np.testing.assert_array_equal(sbp(3, [1, 0, 2]).eta, [[-1, 1, -1], [1, 0, -1]])


def test_sbp_errors():
    with pytest.raises(DimensionError):
        sbp(1)
    with pytest.raises(DimensionError):
        sbp(3, [0, 0, 1])


def test_balance_examples():
    assert balance([1, -1, -1], [1 / 3, 1 / 3, 1 / 3]) == pytest.approx(0.0, abs=1e-15)
    # quoted value 0.565916 is rounded loosely; the closed form is 0.5659523
    assert balance([1, -1, -1], [0.5, 0.25, 0.25]) == pytest.approx(0.565916, abs=5e-5)
    assert balance([1, -1, -1], [0.5, 0.25, 0.25]) == pytest.approx(math.sqrt(2 / 3) * math.log(2))
    assert balance([1, -1], [0.9, 0.1]) == pytest.approx(math.sqrt(0.5) * math.log(9.0))
    with pytest.raises(DomainError):
        balance([1, -1, -1], [0.5, 0.5, 0.0])


def test_balances_all_examples():
    scheme = sbp(3)
    np.testing.assert_allclose(balances_all(scheme, [0.5, 0.25, 0.25]), [math.sqrt(2 / 3) * math.log(2), 0.0],
                               atol=1e-14)
    np.testing.assert_allclose(balances_all(sbp(6), np.full(6, 1 / 6)), np.zeros(5), atol=1e-14)


@given(positive_rows, st.floats(1e-3, 1e3))
def test_balance_scale_invariance(raw, c):
    scheme = sbp(raw.size)
    a = balances_all(scheme, close(raw))
    b = balances_all(scheme, close(c * raw))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
    for k in range(raw.size - 1):
        assert balance(scheme.eta[k], close(c * raw)) == pytest.approx(
            balance(scheme.eta[k], close(raw)), abs=1e-9)


@pytest.mark.parametrize("J", [2, 3, 10, 50])
def test_basis_orthonormal_zero_sum(J):
    A = sbp(J).basis
    np.testing.assert_allclose(A, contrast_rows(J), atol=1e-15)
    assert np.max(np.abs(A @ A.T - np.eye(J - 1))) < 1e-12
    assert np.max(np.abs(A.sum(axis=1))) < 1e-12


def test_basis_follows_order():
    order = np.array([2, 0, 3, 1])
    scheme = sbp(4, order)
    np.testing.assert_allclose(ilr_basis(scheme)[:, order], contrast_rows(4), atol=1e-15)


@settings(max_examples=25)
@given(positive_rows, st.randoms(use_true_random=False))
def test_balances_all_matches_ratio_form(raw, rnd):
    J = raw.size
    order = list(range(J))
    rnd.shuffle(order)
    scheme = sbp(J, order)
    psi = close(raw)
    direct = np.array([balance(scheme.eta[k], psi) for k in range(J - 1)])
    np.testing.assert_allclose(balances_all(scheme, psi), direct, atol=1e-10)


def test_balances_all_linear_in_logs_bulk():
    rng = np.random.default_rng(11)
    for J in (3, 10, 50):
        psi = rng.dirichlet(np.full(J, 0.7), size=1000)
        psi = np.clip(psi, 1e-300, None)
        scheme = sbp(J, rng.permutation(J))
        A = scheme.basis
        B = balances_all(scheme, psi)
        assert B.shape == (1000, J - 1)
        assert np.max(np.abs(B - np.log(psi) @ A.T)) < 1e-10
