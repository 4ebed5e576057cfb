"""Kernel algebra for variance-reduction filtering.

Kernels are plain ``numpy`` arrays: 1D generators of length ``2L+1`` and
square 2D kernels of shape ``(K, K)`` with ``K = 2L + 1``.  All arithmetic is
done in float64.

The variance reduction power (VRP) of a normalized, non-negative kernel is the
factor by which it divides the variance of iid noise, ``1 / sum(c**2)``.
Atomic kernels ``A_L(a) = U_L(a) (x) U_L(a)`` with ``U_L(a)[l] = a**(l*l)``
sweep continuously from the delta kernel (``a = 0``) to the box kernel
(``a = 1``).
"""
from __future__ import annotations

import math

import numpy as np

NORMALIZATION_TOL = 1e-12


def _check_L(L: int) -> None:
    if int(L) != L or L < 1:
        raise ValueError(f"half-width L must be an integer >= 1, got {L!r}")


def _check_a(a: float) -> None:
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"atomic parameter a must lie in [0, 1], got {a!r}")


def _offsets(L: int) -> np.ndarray:
    return np.arange(-L, L + 1)


def generating_kernel(a: float, L: int) -> np.ndarray:
    """Unnormalized 1D generator ``a**(l**2)`` for ``l = -L..L``.

    The center is 1 for every ``a`` (``0**0 = 1``), so ``a = 0`` yields a 1D
    delta and ``a = 1`` a 1D box.
    """
    _check_a(a)
    _check_L(L)
    l2 = _offsets(L) ** 2
    u = np.power(float(a), l2.astype(np.float64))
    u[L] = 1.0
    return u


def _generators(a: np.ndarray, L: int) -> np.ndarray:
    """Row-stacked generators for an array of ``a`` values, shape ``(N, K)``."""
    a = np.asarray(a, dtype=np.float64)
    if np.any((a < 0.0) | (a > 1.0)):
        raise ValueError("atomic parameter a must lie in [0, 1]")
    l2 = (_offsets(L) ** 2).astype(np.float64)
    u = np.power(a[:, None], l2[None, :])
    u[:, L] = 1.0
    return u


def atomic_kernel(a: float, L: int) -> np.ndarray:
    """Normalized ``K x K`` atomic kernel ``(U (x) U) / sum(U)**2``."""
    u = generating_kernel(a, L)
    return np.outer(u, u) / u.sum() ** 2


def atomic_kernels(a: np.ndarray, L: int) -> np.ndarray:
    """Vectorized :func:`atomic_kernel`; returns shape ``(N, K, K)``."""
    _check_L(L)
    u = _generators(a, L)
    u = u / u.sum(axis=1, keepdims=True)
    return u[:, :, None] * u[:, None, :]


def delta_kernel(L: int) -> np.ndarray:
    _check_L(L)
    K = 2 * L + 1
    k = np.zeros((K, K))
    k[L, L] = 1.0
    return k


def box_kernel(L: int) -> np.ndarray:
    _check_L(L)
    K = 2 * L + 1
    return np.full((K, K), 1.0 / K**2)


def gaussian_kernel(sigma: float, L: int) -> np.ndarray:
    """Truncated isotropic Gaussian on ``[-L, L]**2``, normalized to sum 1."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma!r}")
    _check_L(L)
    j = _offsets(L).astype(np.float64)
    r2 = j[:, None] ** 2 + j[None, :] ** 2
    g = np.exp(-r2 / (2.0 * sigma * sigma))
    return g / g.sum()


def sigma_from_a(a: float) -> float:
    """Gaussian width whose truncated kernel coincides with ``A_L(a)``."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"sigma is only defined for 0 < a < 1, got {a!r}")
    return 1.0 / math.sqrt(-2.0 * math.log(a))


def a_from_sigma(sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma!r}")
    return math.exp(-1.0 / (2.0 * sigma * sigma))


def check_normalized(k: np.ndarray) -> None:
    """Raise ``ValueError`` unless ``k`` is non-negative and sums to 1."""
    k = np.asarray(k)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got shape {k.shape}")
    if np.any(k < 0):
        raise ValueError("kernel has negative coefficients")
    s = float(k.sum())
    if abs(s - 1.0) > NORMALIZATION_TOL * k.size:
        raise ValueError(f"kernel is not normalized (sum = {s!r})")


def vrp(k: np.ndarray) -> float:
    """Variance reduction power ``1 / sum(c**2)`` of a normalized kernel."""
    check_normalized(k)
    return 1.0 / float(np.sum(np.square(k)))


def vrp_trace(k: np.ndarray) -> float:
    """VRP from the diagonal, ``1 / trace(k)**2``.

    Only valid for self outer products ``u (x) u``: then ``sum(c**2)`` equals
    ``(sum u_l**2)**2 = trace**2``.  Not true for general symmetric kernels.
    """
    return 1.0 / float(np.trace(k)) ** 2


def vrp_atomic(a: float, L: int) -> float:
    """Closed-form VRP of ``A_L(a)``: ``(sum a^(l^2))**4 / (sum a^(2 l^2))**2``."""
    u = generating_kernel(a, L)
    return float(u.sum() ** 4 / np.dot(u, u) ** 2)


def repeated_box_1d(n: int, L: int) -> np.ndarray:
    """1D box of width ``2L+1`` convolved with itself ``n`` times (sum 1).

    ``n = 0`` gives the 1D delta of length ``2L+1``.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    _check_L(L)
    K = 2 * L + 1
    if n == 0:
        d = np.zeros(K)
        d[L] = 1.0
        return d
    b = np.full(K, 1.0 / K)
    out = b
    for _ in range(n - 1):
        out = np.convolve(out, b)
    return out


def _box_power(n: int, L: int) -> np.ndarray:
    # n-fold box without the zero padding that repeated_box_1d(0, L) carries
    if n == 0:
        return np.ones(1)
    return repeated_box_1d(n, L)


def iterated_generating(a: float, n: int, L: int) -> np.ndarray:
    """Full linear convolution of the ``n``-fold 1D box with ``U_L(a)``."""
    return np.convolve(_box_power(n, L), generating_kernel(a, L))


def iterated_generators(a: np.ndarray, n: int, L: int) -> np.ndarray:
    """Vectorized :func:`iterated_generating`, shape ``(N, 2(n+1)L + 1)``."""
    _check_L(L)
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    u = _generators(a, L)
    b = _box_power(n, L)
    K = 2 * L + 1
    out = np.zeros((u.shape[0], K + b.size - 1))
    for m, w in enumerate(b):
        out[:, m:m + K] += w * u
    return out


def vrp_iterated(a: float, n: int, L: int) -> float:
    """VRP of ``A_L(a)`` applied after ``n`` box passes.

    Equals ``sum(U)**4 / (sum(U**2))**2`` for ``U = b_n * U_L(a)``; ``n = 0``
    reduces to :func:`vrp_atomic`.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    _check_a(a)
    u = iterated_generating(a, n, L)
    return float(u.sum() ** 4 / np.dot(u, u) ** 2)


def vrp_iterated_many(a: np.ndarray, n: int, L: int) -> np.ndarray:
    u = iterated_generators(a, n, L)
    return u.sum(axis=1) ** 4 / np.einsum("ij,ij->i", u, u) ** 2


def p_max_at_iteration(n: int, L: int) -> float:
    """Largest cumulative VRP reachable after pass ``n`` (box at every pass)."""
    return vrp_iterated(1.0, n, L)


def p_min_at_iteration(n: int, L: int) -> float:
    """Cumulative VRP already achieved before pass ``n`` (1 for ``n = 0``)."""
    return 1.0 if n == 0 else p_max_at_iteration(n - 1, L)


def r_max_at_iteration(n: int, L: int) -> float:
    """Largest incremental VRP a single pass can add at pass ``n``."""
    if n == 0:
        return float((2 * L + 1) ** 2)
    return p_max_at_iteration(n, L) / p_max_at_iteration(n - 1, L)
