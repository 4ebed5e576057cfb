"""Building variance reduction ratio maps from domain inputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filterbank import RecursiveBankSet, build_recursive_banks
from .svfilter import (
    DEFAULT_MAX_ITER,
    DEFAULT_Q_MIN,
    FilterReport,
    ShapeMismatchError,
    VRRMap,
    apply_recursive,
    as_raster,
)

DEFAULT_Q_CAP = 1000.0
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class EdgeVrrConfig:
    """Settings for gradient-driven (edge-preserving) VRR maps.

    ``v0`` is the input image variance.  ``mode`` is ``"gradient"``
    (``q = v0 / |grad f|``) or ``"perona_malik"``
    (``q = strength * v0 / (v0 + |grad f|**2)``).  The latter never exceeds
    ``strength``, which is why it defaults to ``q_cap``.
    """

    v0: float
    mode: str = "gradient"
    q_cap: float = DEFAULT_Q_CAP
    strength: float | None = None
    epsilon: float = DEFAULT_EPSILON
    presmooth: bool = False

    def __post_init__(self):
        if not self.v0 > 0:
            raise ValueError(f"v0 must be > 0, got {self.v0!r}")
        if self.mode not in ("gradient", "perona_malik"):
            raise ValueError(f"unknown edge VRR mode {self.mode!r}")
        if not self.q_cap >= 1:
            raise ValueError(f"q_cap must be >= 1, got {self.q_cap!r}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon!r}")
        if self.strength is not None and not self.strength > 0:
            raise ValueError(f"strength must be > 0, got {self.strength!r}")

    @property
    def effective_strength(self) -> float:
        return self.q_cap if self.strength is None else self.strength


def _clamped(q: np.ndarray, q_cap: float = np.inf) -> VRRMap:
    return VRRMap.from_array(np.clip(q, 1.0, q_cap))


def vrr_from_variance(v, v_target: float) -> VRRMap:
    """``q = max(1, v / v_target)``."""
    if not v_target > 0:
        raise ValueError(f"target variance must be > 0, got {v_target!r}")
    return _clamped(as_raster(v) / v_target)


def vrr_from_counts(counts, u_target: float, floor: float | None = None) -> VRRMap:
    """VRR for pre-log count data whose after-log variance is ``1 / count``.

    Non-positive counts are an error unless ``floor`` is given, in which case
    counts are raised to it first.
    """
    if not u_target > 0:
        raise ValueError(f"target variance must be > 0, got {u_target!r}")
    c = as_raster(counts)
    if floor is not None:
        if not floor > 0:
            raise ValueError(f"count floor must be > 0, got {floor!r}")
        c = np.maximum(c, floor)
    elif np.any(c <= 0):
        raise ValueError(f"{int(np.sum(c <= 0))} non-positive count(s) and no floor configured")
    return _clamped(1.0 / (c * u_target))


def gradient_magnitude(f) -> np.ndarray:
    """Central-difference ``sqrt(fx**2 + fy**2)``, one-sided at the borders."""
    f = as_raster(f)
    if min(f.shape) < 2:
        raise ValueError(f"gradient needs at least 2x2 pixels, got {f.shape}")
    gy, gx = np.gradient(f)
    return np.hypot(gx, gy)


def _box3(f: np.ndarray) -> np.ndarray:
    fp = np.pad(f, 1, mode="edge")
    H, W = f.shape
    return sum(fp[dy:dy + H, dx:dx + W] for dy in range(3) for dx in range(3)) / 9.0


def _grad(f, cfg: EdgeVrrConfig) -> np.ndarray:
    f = as_raster(f)
    return gradient_magnitude(_box3(f) if cfg.presmooth else f)


def vrr_edge(f, cfg: EdgeVrrConfig) -> VRRMap:
    """``q = clamp(v0 / max(|grad f|, epsilon), 1, q_cap)``."""
    g = _grad(f, cfg)
    return _clamped(cfg.v0 / np.maximum(g, cfg.epsilon), cfg.q_cap)


def vrr_perona_malik(f, cfg: EdgeVrrConfig) -> VRRMap:
    """``q = clamp(strength * v0 / (v0 + |grad f|**2), 1, q_cap)``."""
    g = _grad(f, cfg)
    return _clamped(cfg.effective_strength * cfg.v0 / (cfg.v0 + g * g), cfg.q_cap)


def vrr_from_edges(f, cfg: EdgeVrrConfig) -> VRRMap:
    return vrr_edge(f, cfg) if cfg.mode == "gradient" else vrr_perona_malik(f, cfg)


def blend(original, filtered, alpha: float) -> np.ndarray:
    """``alpha * original + (1 - alpha) * filtered``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    o = as_raster(original)
    g = as_raster(filtered)
    if o.shape != g.shape:
        raise ShapeMismatchError("blend inputs", o.shape, g.shape)
    if alpha == 1.0:
        return o.copy()
    if alpha == 0.0:
        return g.copy()
    return alpha * o + (1.0 - alpha) * g


def denoise(
    f,
    cfg: EdgeVrrConfig,
    alpha: float = 0.0,
    banks: RecursiveBankSet | None = None,
    q_min: float = DEFAULT_Q_MIN,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, VRRMap, FilterReport]:
    """Edge-preserving denoising: edge VRR map, recursive filter, then blend.

    Returns the blended result, the VRR map used and the filter report.
    """
    f = as_raster(f)
    if banks is None:
        banks = build_recursive_banks(1, use_closed_form=True)
    q = vrr_from_edges(f, cfg)
    filtered, report = apply_recursive(f, q, banks, q_min, max_iter)
    return blend(f, filtered, alpha), q, report
