import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrfilter import kernels as kn

A_GRID = np.round(np.arange(0, 101) / 100, 2)


def brute_vrp(k):
    # direct sum over every coefficient, no vectorization shortcuts
    return 1.0 / sum(float(c) ** 2 for c in np.asarray(k).ravel())


def test_generating_kernel_examples():
    np.testing.assert_array_equal(kn.generating_kernel(0.5, 1), [0.5, 1, 0.5])
    np.testing.assert_array_equal(kn.generating_kernel(0.0, 2), [0, 0, 1, 0, 0])
    np.testing.assert_array_equal(kn.generating_kernel(1.0, 1), [1, 1, 1])
    np.testing.assert_allclose(kn.generating_kernel(0.5, 3), [0.5**9, 0.5**4, 0.5, 1, 0.5, 0.5**4, 0.5**9])


@pytest.mark.parametrize("a,L", [(-0.1, 1), (1.5, 1), (0.5, 0), (0.5, -2)])
def test_generating_kernel_domain(a, L):
    with pytest.raises(ValueError):
        kn.generating_kernel(a, L)


def test_atomic_kernel_half():
    expected = np.array([[0.0625, 0.125, 0.0625], [0.125, 0.25, 0.125], [0.0625, 0.125, 0.0625]])
    np.testing.assert_allclose(kn.atomic_kernel(0.5, 1), expected, atol=1e-15)


def test_atomic_kernel_endpoints():
    np.testing.assert_array_equal(kn.atomic_kernel(0.0, 1), kn.delta_kernel(1))
    np.testing.assert_allclose(kn.atomic_kernel(1.0, 1), np.full((3, 3), 1 / 9), atol=1e-15)


def test_delta_and_box():
    np.testing.assert_array_equal(kn.delta_kernel(1), [[0, 0, 0], [0, 1, 0], [0, 0, 0]])
    d2 = kn.delta_kernel(2)
    assert d2.shape == (5, 5) and d2[2, 2] == 1 and d2.sum() == 1
    for L in (1, 2, 3, 5):
        assert kn.vrp(kn.delta_kernel(L)) == 1.0
    assert kn.vrp(kn.box_kernel(1)) == pytest.approx(9.0, abs=1e-12)
    assert kn.vrp(kn.box_kernel(3)) == pytest.approx(49.0, abs=1e-12)


def test_gaussian_kernel_limits():
    k = kn.gaussian_kernel(0.05, 1)
    off = k.copy()
    off[1, 1] = 0
    assert off.max() < 1e-12
    np.testing.assert_allclose(kn.gaussian_kernel(100.0, 1), kn.box_kernel(1), atol=1e-3)
    with pytest.raises(ValueError):
        kn.gaussian_kernel(0.0, 1)


def test_gaussian_matches_atomic_half():
    sigma = 1 / math.sqrt(2 * math.log(2))
    assert kn.sigma_from_a(0.5) == pytest.approx(sigma, rel=1e-15)
    np.testing.assert_allclose(kn.gaussian_kernel(sigma, 1), kn.atomic_kernel(0.5, 1), atol=1e-12)


def test_sigma_from_a():
    assert kn.sigma_from_a(math.exp(-0.5)) == pytest.approx(1.0, rel=1e-14)
    assert kn.sigma_from_a(math.exp(-2.0)) == pytest.approx(0.5, rel=1e-14)
    assert kn.sigma_from_a(kn.a_from_sigma(0.8)) == pytest.approx(0.8, rel=1e-14)
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            kn.sigma_from_a(bad)


def test_vrp_examples():
    assert kn.vrp(kn.atomic_kernel(0.5, 1)) == pytest.approx(64 / 9, rel=1e-14)
    with pytest.raises(ValueError):
        kn.vrp(np.full((3, 3), 1.0))
    with pytest.raises(ValueError):
        kn.vrp(np.array([[0.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, -0.5, 0.0]]))


def test_vrp_trace_examples():
    assert kn.vrp_trace(kn.atomic_kernel(0.5, 1)) == pytest.approx(1 / 0.375**2, rel=1e-14)
    assert kn.vrp_trace(kn.box_kernel(1)) == pytest.approx(9.0, rel=1e-14)
    assert kn.vrp_trace(kn.delta_kernel(1)) == 1.0


def test_vrp_trace_does_not_hold_for_general_symmetric():
    # 4-fold symmetric but not a self outer product
    k = np.array([[0.0, 0.1, 0.0], [0.1, 0.6, 0.1], [0.0, 0.1, 0.0]])
    assert abs(kn.vrp(k) - kn.vrp_trace(k)) > 0.1


def test_vrp_atomic_examples():
    assert kn.vrp_atomic(0.25, 1) == pytest.approx(4.0, rel=1e-14)
    assert kn.vrp_atomic(1.0, 1) == pytest.approx(9.0, rel=1e-14)
    assert kn.vrp_atomic(0.5, 1) == pytest.approx(2**4 / 1.5**2, rel=1e-14)
    assert kn.vrp_atomic(0.5, 1) == pytest.approx(kn.vrp(kn.atomic_kernel(0.5, 1)), rel=1e-14)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_vrp_identities_on_grid(L):
    for a in A_GRID:
        k = kn.atomic_kernel(a, L)
        assert np.all(k >= 0)
        assert abs(k.sum() - 1) < 1e-12
        ref = brute_vrp(k)
        assert kn.vrp(k) == pytest.approx(ref, rel=1e-12)
        assert kn.vrp_trace(k) == pytest.approx(ref, rel=1e-12)
        assert kn.vrp_atomic(a, L) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_vrp_atomic_monotone_and_range(L):
    p = np.array([kn.vrp_atomic(a, L) for a in np.linspace(0, 1, 2001)])
    assert p[0] == 1.0
    assert p[-1] == pytest.approx((2 * L + 1) ** 2, rel=1e-14)
    assert np.all(np.diff(p) > 0)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_gaussian_correspondence_grid(L):
    for a in np.arange(1, 100) / 100:
        g = kn.gaussian_kernel(kn.sigma_from_a(a), L)
        assert np.max(np.abs(g - kn.atomic_kernel(a, L))) < 1e-12


def test_repeated_box_1d():
    np.testing.assert_allclose(kn.repeated_box_1d(1, 1), np.ones(3) / 3, atol=1e-16)
    np.testing.assert_allclose(kn.repeated_box_1d(2, 1), np.array([1, 2, 3, 2, 1]) / 9, atol=1e-16)
    np.testing.assert_array_equal(kn.repeated_box_1d(0, 2), [0, 0, 1, 0, 0])
    assert kn.repeated_box_1d(3, 2).size == 2 * 3 * 2 + 1


def test_iterated_generating():
    np.testing.assert_array_equal(kn.iterated_generating(0.3, 0, 2), kn.generating_kernel(0.3, 2))
    np.testing.assert_allclose(kn.iterated_generating(1.0, 1, 1), np.array([1, 2, 3, 2, 1]) / 3, atol=1e-15)
    np.testing.assert_allclose(
        kn.iterated_generating(0.5, 1, 1), np.array([0.5, 1.5, 2, 1.5, 0.5]) / 3, atol=1e-15
    )


def _poly_vrp(a, n):
    # closed-form polynomials for 3x3 kernels at passes 0..2
    num = (1 + 2 * a) ** 4
    if n == 0:
        return num / (1 + 2 * a * a) ** 2
    if n == 1:
        return 81 * num / (3 + 8 * a + 8 * a * a) ** 2
    return 81**2 * num / (19 + 64 * a + 58 * a * a) ** 2


@pytest.mark.parametrize("n", [0, 1, 2])
def test_vrp_iterated_matches_polynomials(n):
    for a in A_GRID:
        assert kn.vrp_iterated(a, n, 1) == pytest.approx(_poly_vrp(a, n), rel=1e-12)


def test_vrp_iterated_examples():
    assert kn.vrp_iterated(1.0, 1, 1) == pytest.approx(6561 / 361, rel=1e-14)
    assert kn.vrp_iterated(1.0, 2, 1) == pytest.approx(81**3 / 141**2, rel=1e-14)
    assert kn.vrp_iterated(0.0, 1, 1) == pytest.approx(9.0, rel=1e-14)


def test_vrp_iterated_against_2d_convolution():
    # independent route: build the 2D kernel b_n * A(a) explicitly
    from scipy.signal import convolve2d

    for a, n, L in [(0.3, 1, 1), (0.7, 2, 2), (0.5, 3, 1)]:
        k2 = kn.atomic_kernel(a, L)
        for _ in range(n):
            k2 = convolve2d(k2, kn.box_kernel(L))
        assert kn.vrp_iterated(a, n, L) == pytest.approx(brute_vrp(k2), rel=1e-12)


def test_vrp_iterated_many_matches_scalar():
    a = np.linspace(0, 1, 37)
    for n, L in [(0, 1), (2, 2), (4, 3)]:
        np.testing.assert_allclose(
            kn.vrp_iterated_many(a, n, L), [kn.vrp_iterated(x, n, L) for x in a], rtol=1e-13
        )


def test_p_max_and_r_max_examples():
    assert kn.p_max_at_iteration(0, 2) == pytest.approx(25.0, abs=1e-12)
    assert kn.p_max_at_iteration(7, 1) == pytest.approx(68.62, abs=0.01)
    assert kn.p_max_at_iteration(3, 3) == pytest.approx(209.20, abs=0.01)
    assert kn.r_max_at_iteration(1, 1) == pytest.approx(2.019, abs=0.001)
    assert kn.r_max_at_iteration(2, 2) == pytest.approx(1.473, abs=0.001)
    assert kn.r_max_at_iteration(0, 3) == 49.0


@pytest.mark.parametrize("L", [1, 2, 3])
def test_incremental_decay(L):
    r = [kn.r_max_at_iteration(n, L) for n in range(1, 12)]
    assert all(x > y for x, y in zip(r, r[1:]))
    assert all(x > 1 for x in r)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0, 1), L=st.integers(1, 4), n=st.integers(0, 4))
def test_iterated_vrp_bounded_by_pass_range(a, L, n):
    p = kn.vrp_iterated(a, n, L)
    assert kn.p_min_at_iteration(n, L) * (1 - 1e-12) <= p <= kn.p_max_at_iteration(n, L) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0, 1), L=st.integers(1, 5))
def test_atomic_normalized_and_symmetric(a, L):
    k = kn.atomic_kernel(a, L)
    assert abs(k.sum() - 1) < 1e-12 and np.all(k >= 0)
    np.testing.assert_array_equal(k, k.T)
    np.testing.assert_array_equal(k, k[::-1, :])
    assert 1 - 1e-12 <= kn.vrp(k) <= (2 * L + 1) ** 2 * (1 + 1e-12)
