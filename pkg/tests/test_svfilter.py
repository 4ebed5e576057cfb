import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vrfilter import filterbank as fb
from vrfilter import kernels as kn
from vrfilter import svfilter as sv
from vrfilter.harness import make_rng


def noise(shape, seed=0):
    return make_rng(seed, 99).standard_normal(shape)


def test_convolve_at_examples():
    f = np.arange(1.0, 10.0).reshape(3, 3)
    assert sv.convolve_at(f, (1, 1), kn.box_kernel(1)) == pytest.approx(5.0, abs=1e-15)
    g = noise((6, 7))
    for y, x in [(0, 0), (3, 4), (5, 6)]:
        assert sv.convolve_at(g, (y, x), kn.delta_kernel(1)) == g[y, x]
    c = np.full((4, 4), 2.7)
    assert sv.convolve_at(c, (0, 3), kn.atomic_kernel(0.7, 2)) == 2.7


def test_convolve_at_replicates_edges():
    f = np.arange(1.0, 10.0).reshape(3, 3)
    # corner with clamp-to-edge: rows (0,0,1), cols (0,0,1)
    expected = np.mean([f[yy, xx] for yy in (0, 0, 1) for xx in (0, 0, 1)])
    assert sv.convolve_at(f, (0, 0), kn.box_kernel(1)) == pytest.approx(expected, abs=1e-14)


def test_convolution_matches_correlation_flip():
    # asymmetric kernel to pin down the sign convention sum_j c_j f[i - j]
    k = np.zeros((3, 3))
    k[0, 2] = 1.0  # j = (-1, +1)
    f = np.round(100 * noise((5, 5)))
    assert sv.convolve_at(f, (2, 2), k) == f[3, 1]


def test_vectorized_path_matches_scalar(fixed_bank_l1):
    f = noise((9, 11), 3)
    q = 1 + 8 * make_rng(3, 1).random(f.shape)
    out = sv.apply_fixed(f, q, fixed_bank_l1)
    idx = fixed_bank_l1.index_for(q)
    for y in range(9):
        for x in range(11):
            ref = sv.convolve_at(f, (y, x), fixed_bank_l1.kernels[idx[y, x]]) if idx[y, x] else f[y, x]
            assert out[y, x] == ref


def test_fixed_identity_and_constant(fixed_bank_l1):
    f = noise((20, 20))
    assert np.array_equal(sv.apply_fixed(f, np.ones_like(f), fixed_bank_l1), f)
    c = np.full((16, 16), -3.25)
    q = 1 + 20 * make_rng(1, 2).random(c.shape)
    assert np.array_equal(sv.apply_fixed(c, q, fixed_bank_l1), c)


def test_fixed_does_not_modify_input(fixed_bank_l1):
    f = noise((10, 10))
    keep = f.copy()
    sv.apply_fixed(f, np.full(f.shape, 5.0), fixed_bank_l1)
    assert np.array_equal(f, keep)


def test_fixed_rejects_bad_inputs(fixed_bank_l1, banks_l1):
    with pytest.raises(sv.ShapeMismatchError) as exc:
        sv.apply_fixed(np.zeros((4, 5)), np.ones((5, 4)), fixed_bank_l1)
    assert exc.value.shape_a == (5, 4) and exc.value.shape_b == (4, 5)
    with pytest.raises(ValueError):
        sv.apply_fixed(np.zeros((4, 4)), np.ones((4, 4)), banks_l1.banks[1])


def test_fixed_variance_targeting_and_saturation():
    bank = fb.build_fixed_bank(3)
    for q, expected in [(49.0, 1 / 49), (20.0, 1 / 20), (200.0, 1 / 49)]:
        vals = []
        for t in range(20):
            f = noise((128, 128), t)
            out = sv.apply_fixed(f, np.full(f.shape, q), bank)
            vals.append(out[14:114, 14:114].var(ddof=1) / f[14:114, 14:114].var(ddof=1))
        assert np.mean(vals) == pytest.approx(expected, rel=0.05)


def test_recursive_identity(banks_l1):
    f = noise((24, 24))
    out, rep = sv.apply_recursive(f, np.ones_like(f), banks_l1)
    assert np.array_equal(out, f)
    assert rep.iterations_used == 0 and rep.pixels_active_per_iteration == []
    assert not rep.max_iter_exhausted


def test_recursive_constant_image(banks_l1):
    c = np.full((20, 20), 7.0)
    q = 1 + 150 * make_rng(5, 5).random(c.shape)
    out, _ = sv.apply_recursive(c, q, banks_l1)
    assert np.array_equal(out, c)


def test_recursive_q100_variance(banks_l1):
    ratios = []
    for t in range(20):
        f = noise((128, 128), 100 + t)
        out, rep = sv.apply_recursive(f, np.full(f.shape, 100.0), banks_l1)
        ratios.append(out[14:114, 14:114].var(ddof=1) / f[14:114, 14:114].var(ddof=1))
    assert np.mean(ratios) == pytest.approx(0.01, rel=0.10)
    assert rep.iterations_used == 12


@pytest.mark.parametrize("q", [4.0, 9.0, 15.0, 30.0, 60.0])
def test_recursive_variance_targeting(banks_l1, q):
    ratios = []
    for t in range(20):
        f = noise((96, 96), 200 + t)
        out, _ = sv.apply_recursive(f, np.full(f.shape, q), banks_l1)
        ratios.append(out[20:76, 20:76].var(ddof=1) / f[20:76, 20:76].var(ddof=1) * q)
    assert 0.9 <= np.mean(ratios) <= 1.1


def test_order_independence_bit_exact(banks_l1):
    f = noise((7, 9), 11)
    q = 1 + 40 * make_rng(11, 1).random(f.shape)
    q[2, 3] = 1.0
    ref, rep_ref = sv.apply_recursive(f, q, banks_l1)
    for s in range(3):
        order = make_rng(11, 2, s).permutation(f.size)
        out, rep = sv.apply_recursive(f, q, banks_l1, order=order)
        assert np.array_equal(out, ref)
        assert rep.pixels_active_per_iteration == rep_ref.pixels_active_per_iteration


def test_order_must_be_permutation(banks_l1):
    with pytest.raises(ValueError):
        sv.apply_recursive(np.zeros((2, 2)), np.full((2, 2), 5.0), banks_l1, order=[0, 1, 1, 3])


def test_monotone_residuals_and_report(banks_l1):
    f = noise((30, 30))
    q = 1 + 120 * make_rng(2, 2).random(f.shape)
    _, rep = sv.apply_recursive(f, q, banks_l1)
    counts = rep.pixels_active_per_iteration
    assert counts[0] == np.sum(q > sv.DEFAULT_Q_MIN)
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert rep.iterations_used == len(counts)
    assert rep.residual_q_max <= sv.DEFAULT_Q_MIN
    assert not rep.max_iter_exhausted


def test_spatially_varying_q_matches_uniform_runs(banks_l1):
    # a pixel far from any boundary between regions sees only its own q
    f = noise((40, 40), 4)
    q = np.full(f.shape, 9.0)
    q[:, 20:] = 30.0
    mixed, _ = sv.apply_recursive(f, q, banks_l1)
    left, _ = sv.apply_recursive(f, np.full(f.shape, 9.0), banks_l1)
    assert np.array_equal(mixed[:, :10], left[:, :10])


def test_max_iter_warning(banks_l1):
    f = noise((8, 8))
    with pytest.warns(sv.MaxIterationsWarning):
        _, rep = sv.apply_recursive(f, np.full(f.shape, 100.0), banks_l1, max_iter=3)
    assert rep.max_iter_exhausted and rep.iterations_used == 3
    assert rep.residual_q_max > sv.DEFAULT_Q_MIN


def test_recursive_rejects_bad_inputs(banks_l1):
    with pytest.raises(sv.ShapeMismatchError):
        sv.apply_recursive(np.zeros((3, 3)), np.ones((3, 4)), banks_l1)
    with pytest.raises(ValueError):
        sv.apply_recursive(np.zeros((3, 3)), np.ones((3, 3)), banks_l1, q_min=1.0)


def test_vrr_map_clamping():
    m = sv.VRRMap.from_array([[0.5, 2.0], [1.0, -3.0]])
    np.testing.assert_array_equal(m.q, [[1.0, 2.0], [1.0, 1.0]])
    assert m.n_clamped == 2
    with pytest.raises(ValueError):
        m.q[0, 0] = 5.0
    with pytest.raises(ValueError):
        sv.VRRMap.from_array([[np.nan, 1.0]])
    _, rep = sv.apply_recursive(np.zeros((2, 2)), [[0.2, 1.0], [1.0, 1.0]], fb.build_recursive_banks(1, 16))
    assert rep.clamped_pixels == 1


@pytest.mark.parametrize("q,L,n", [(100, 1, 11), (8, 1, 0), (50, 2, 2), (1, 3, 0)])
def test_estimate_iterations(q, L, n):
    assert sv.estimate_iterations(q, L) == n


def test_estimate_iterations_domain():
    with pytest.raises(ValueError):
        sv.estimate_iterations(0.5, 1)


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.float64, (6, 6), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (6, 6), elements=st.floats(0.0, 60.0)),
)
def test_recursive_output_stays_within_input_range(f, q):
    # non-negative normalized kernels never leave the input's value range
    banks = _small_banks()
    out, _ = sv.apply_recursive(f, q, banks)
    span = max(1.0, float(np.abs(f).max()))
    assert out.min() >= f.min() - 1e-12 * span
    assert out.max() <= f.max() + 1e-12 * span


@settings(max_examples=25, deadline=None)
@given(st.floats(-50, 50), arrays(np.float64, (5, 8), elements=st.floats(0.0, 80.0)))
def test_recursive_preserves_constants(c, q):
    f = np.full((5, 8), c)
    out, _ = sv.apply_recursive(f, q, _small_banks())
    assert np.array_equal(out, f)


_BANKS = {}


def _small_banks():
    if "b" not in _BANKS:
        _BANKS["b"] = fb.build_recursive_banks(1, 128, use_closed_form=True)
    return _BANKS["b"]
