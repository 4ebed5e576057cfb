"""Space-variant variance-reduction filters.

Rasters are 2D float64 arrays indexed ``[y, x]``.  Boundaries are handled by
edge replication, so every kernel keeps its full normalized footprint.
Convolutions are accumulated as ``f_i + sum_j c_j (f_{i-j} - f_i)``, which
equals ``sum_j c_j f_{i-j}`` for normalized kernels and returns flat patches
bit for bit.

Two engines are provided:

* :func:`apply_fixed` picks one kernel per pixel from a single-pass bank, so
  the reachable reduction is capped at ``K**2``.
* :func:`apply_recursive` runs repeated small-kernel passes.  Pass ``n``
  applies to each pixel whose residual ratio still exceeds ``q_min`` the bank
  kernel adding incremental VRP ``r = min(q_i, r_max(n))``, then divides the
  residual by the ``r`` that kernel actually delivers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .filterbank import FilterBank, RecursiveBankSet, position_to_index

DEFAULT_Q_MIN = 1.01
DEFAULT_MAX_ITER = 64


class ShapeMismatchError(ValueError):
    def __init__(self, what: str, shape_a, shape_b):
        super().__init__(f"{what}: shape {tuple(shape_a)} does not match {tuple(shape_b)}")
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)


class MaxIterationsWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class VRRMap:
    """Per-pixel variance reduction ratios, clamped to ``q >= 1``."""

    q: np.ndarray
    n_clamped: int = 0

    @classmethod
    def from_array(cls, q) -> "VRRMap":
        q = np.array(q, dtype=np.float64)
        if q.ndim != 2:
            raise ValueError(f"VRR map must be 2D, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("VRR map contains non-finite values")
        low = q < 1.0
        q[low] = 1.0
        q.setflags(write=False)
        return cls(q=q, n_clamped=int(low.sum()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.q.shape


@dataclass
class FilterReport:
    iterations_used: int = 0
    pixels_active_per_iteration: list[int] = field(default_factory=list)
    residual_q_max: float = 1.0
    max_iter_exhausted: bool = False
    clamped_pixels: int = 0


def as_raster(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise ValueError(f"raster must be a non-empty 2D array, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("raster contains non-finite values")
    return f


def _as_vrr(q) -> VRRMap:
    return q if isinstance(q, VRRMap) else VRRMap.from_array(q)


def convolve_at(f: np.ndarray, i: tuple[int, int], k: np.ndarray) -> float:
    """``sum_j c_j f[i - j]`` at a single pixel with edge replication."""
    H, W = f.shape
    K = k.shape[0]
    L = K // 2
    y, x = i
    center = float(f[y, x])
    acc = 0.0
    for dy in range(K):
        yy = min(max(y + L - dy, 0), H - 1)
        for dx in range(K):
            xx = min(max(x + L - dx, 0), W - 1)
            acc += float(k[dy, dx]) * (float(f[yy, xx]) - center)
    return center + acc


def _convolve_selected(f: np.ndarray, kernels: np.ndarray, idx: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # Same term order as convolve_at so both paths agree bit for bit.
    H, W = f.shape
    K = kernels.shape[1]
    L = K // 2
    fp = np.pad(f, L, mode="edge")
    coeffs = kernels[idx]
    acc = np.zeros_like(f)
    for dy in range(K):
        for dx in range(K):
            acc += coeffs[:, :, dy, dx] * (fp[2 * L - dy:2 * L - dy + H, 2 * L - dx:2 * L - dx + W] - f)
    return np.where(mask, f + acc, f)


def _convolve_selected_ordered(f, kernels, idx, mask, order) -> np.ndarray:
    H, W = f.shape
    out = f.copy()
    for flat in order:
        y, x = divmod(int(flat), W)
        if mask[y, x]:
            out[y, x] = convolve_at(f, (y, x), kernels[idx[y, x]])
    return out


def apply_fixed(f, q, bank: FilterBank) -> np.ndarray:
    """Single-pass space-variant filter; ``q`` above ``K**2`` saturates."""
    f = as_raster(f)
    vrr = _as_vrr(q)
    if vrr.shape != f.shape:
        raise ShapeMismatchError("VRR map vs raster", vrr.shape, f.shape)
    if bank.iteration != 0:
        raise ValueError(f"fixed filtering needs a pass-0 bank, got pass {bank.iteration}")
    p = np.minimum(vrr.q, bank.p_max)
    idx = bank.index_for(p)
    return _convolve_selected(f, bank.kernels, idx, idx > 0)


def apply_recursive(
    f,
    q,
    banks: RecursiveBankSet,
    q_min: float = DEFAULT_Q_MIN,
    max_iter: int = DEFAULT_MAX_ITER,
    order=None,
) -> tuple[np.ndarray, FilterReport]:
    """Recursive space-variant filter.

    Parameters
    ----------
    f : array_like
        Input raster.
    q : array_like or VRRMap
        Requested variance reduction ratio per pixel.
    banks : RecursiveBankSet
    q_min : float
        Pixels whose residual ratio is at or below this are left alone.
    max_iter : int
        Hard cap on passes; hitting it is flagged in the report and warned.
    order : sequence of int, optional
        Visit pixels one by one in this flat order (slow reference path).
        Every pass reads only the previous pass's buffer, so the result does
        not depend on the order.

    Returns
    -------
    filtered : ndarray
    report : FilterReport
    """
    f = as_raster(f)
    vrr = _as_vrr(q)
    if vrr.shape != f.shape:
        raise ShapeMismatchError("VRR map vs raster", vrr.shape, f.shape)
    if not q_min > 1.0:
        raise ValueError(f"q_min must be > 1, got {q_min!r}")
    if order is not None:
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(f.size)):
            raise ValueError("order must be a permutation of all flat pixel indices")

    residual = vrr.q.copy()
    cur = f.copy()
    report = FilterReport(clamped_pixels=vrr.n_clamped)
    bins = banks.bin_count
    n = 0
    while n < max_iter:
        active = residual > q_min
        count = int(active.sum())
        if count == 0:
            break
        r_max = banks.r_max(n)
        r_req = np.minimum(residual, r_max)
        idx = position_to_index((r_req - 1.0) / (r_max - 1.0), bins)
        # bin 0 is the delta kernel; an active pixel must make progress
        idx = np.where(active, np.maximum(idx, 1), 0)
        kernels = banks.bank_for(n).kernels
        if order is None:
            cur = _convolve_selected(cur, kernels, idx, active)
        else:
            cur = _convolve_selected_ordered(cur, kernels, idx, active, order)
        residual = np.where(active, residual / banks.achieved_r(n)[idx], residual)
        report.pixels_active_per_iteration.append(count)
        n += 1

    report.iterations_used = n
    report.residual_q_max = float(residual.max())
    report.max_iter_exhausted = bool(np.any(residual > q_min))
    if report.max_iter_exhausted:
        warnings.warn(
            f"recursive filter stopped at max_iter={max_iter} with residual q up to "
            f"{report.residual_q_max:.4g}",
            MaxIterationsWarning,
            stacklevel=2,
        )
    return cur, report


def estimate_iterations(q: float, L: int) -> int:
    """Rough pass count ``floor(q / K**2)`` from the linear growth model."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q!r}")
    return int(math.floor(q / (2 * L + 1) ** 2))


def uniform_vrr(shape, q: float) -> VRRMap:
    return VRRMap.from_array(np.full(shape, float(q)))

