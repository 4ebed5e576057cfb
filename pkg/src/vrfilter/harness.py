"""Synthetic noise experiments, variance measurement and CSV output.

Every random draw comes from its own PCG64 stream keyed by
``(seed, experiment tag, sample index, repeat)``, so results do not depend on
execution order and parallel runs reproduce serial ones exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.signal import convolve2d

from . import __version__
from . import kernels as kn
from .filterbank import DEFAULT_BINS, build_fixed_bank, build_recursive_banks
from .svfilter import DEFAULT_MAX_ITER, DEFAULT_Q_MIN, apply_fixed, apply_recursive, uniform_vrr
from .vrrmaps import vrr_from_counts

RNG_ID = "numpy.random.PCG64+SeedSequence"
POISSON_METHOD = "numpy Generator.poisson (inversion for lam < 10, PTRS rejection above)"

# zero counts are raised to this before taking logs
LOG_COUNT_FLOOR = 0.5

_TEST1_TAG = 1
_TEST2_TAG = 2


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def gen_gaussian_sample(dim: int, mean: float, variance: float, rng: np.random.Generator) -> np.ndarray:
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance!r}")
    return mean + math.sqrt(variance) * rng.standard_normal((dim, dim))


def gen_poisson_sample(dim: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    if not lam > 0:
        raise ValueError(f"Poisson rate must be > 0, got {lam!r}")
    return rng.poisson(lam, size=(dim, dim)).astype(np.float64)


def centered_roi(f: np.ndarray, roi: int) -> np.ndarray:
    H, W = f.shape
    if roi < 1 or roi > min(H, W):
        raise ValueError(f"ROI {roi} does not fit in raster of shape {f.shape}")
    y0, x0 = (H - roi) // 2, (W - roi) // 2
    return f[y0:y0 + roi, x0:x0 + roi]


def measure_variance(f: np.ndarray, roi: int | None = None) -> float:
    """Unbiased sample variance over the centered ``roi x roi`` block."""
    block = f if roi is None else centered_roi(f, roi)
    return float(np.var(block, ddof=1))


def log_counts(counts: np.ndarray, floor: float = LOG_COUNT_FLOOR) -> np.ndarray:
    return np.log(np.maximum(counts, floor))


def monte_carlo_vrp(k: np.ndarray, trials: int, rng: np.random.Generator) -> float:
    """Empirical ``var(noise) / var(noise * k)`` over about ``trials`` outputs.

    Uses ``scipy.signal.convolve2d`` on the valid interior, independently of
    the filtering engines.
    """
    if trials < 100_000:
        raise ValueError(f"need at least 1e5 trials, got {trials}")
    K = k.shape[0]
    side = int(math.ceil(math.sqrt(trials)))
    noise = rng.standard_normal((side + K - 1, side + K - 1))
    out = convolve2d(noise, k, mode="valid")
    return float(np.var(noise, ddof=1) / np.var(out, ddof=1))


# -- filter specs ----------------------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    """``fixed`` or ``recursive`` filtering with ``size x size`` kernels."""

    mode: str
    size: int

    def __post_init__(self):
        if self.mode not in ("fixed", "recursive"):
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 3, got {self.size}")

    @property
    def L(self) -> int:
        return self.size // 2

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        """Parse ``"fixed:7"`` or ``"recursive:3"``."""
        try:
            mode, size = text.split(":")
            return cls(mode.strip(), int(size))
        except ValueError as exc:
            raise ValueError(f"bad filter spec {text!r}; expected e.g. fixed:7 or recursive:3") from exc

    def __str__(self) -> str:
        return f"{self.mode}:{self.size}"


class Filterer:
    """Builds the banks for a :class:`FilterSpec` once and applies them."""

    def __init__(self, spec: FilterSpec, bins: int = DEFAULT_BINS, q_min: float = DEFAULT_Q_MIN,
                 max_iter: int = DEFAULT_MAX_ITER):
        self.spec = spec
        self.q_min = q_min
        self.max_iter = max_iter
        if spec.mode == "fixed":
            self.bank = build_fixed_bank(spec.L, bins)
        else:
            self.bank = build_recursive_banks(spec.L, bins, use_closed_form=spec.L == 1)

    def __call__(self, f: np.ndarray, q) -> tuple[np.ndarray, int]:
        """Filter ``f``; returns the result and the number of passes."""
        if self.spec.mode == "fixed":
            return apply_fixed(f, q, self.bank), 1
        out, report = apply_recursive(f, q, self.bank, self.q_min, self.max_iter)
        return out, report.iterations_used


# -- Test 1: Gaussian noise ---------------------------------------------------------


@dataclass
class Test1Config:
    filter_spec: str = "recursive:5"
    n_samples: int = 200
    sample_dim: int = 128
    roi_dim: int = 100
    v_target: float = 1.0
    repeats: int = 20
    seed: int = 0
    q_source: str = "measured"
    bins: int = DEFAULT_BINS
    n_jobs: int = 1

    def __post_init__(self):
        if self.roi_dim > self.sample_dim:
            raise ValueError("roi_dim must not exceed sample_dim")
        if self.n_samples < 1 or self.repeats < 1:
            raise ValueError("n_samples and repeats must be >= 1")
        if self.q_source not in ("measured", "expected"):
            raise ValueError(f"q_source must be 'measured' or 'expected', got {self.q_source!r}")
        FilterSpec.parse(self.filter_spec)


TEST1_COLUMNS = ["sample_index", "v_expected", "v_measured_mean", "v_filtered_mean", "v_target",
                 "iterations_mean"]


def _test1_sample(cfg: Test1Config, filt: Filterer, n: int) -> dict:
    v_in, v_out, iters = [], [], []
    shape = (cfg.sample_dim, cfg.sample_dim)
    for r in range(cfg.repeats):
        f = gen_gaussian_sample(cfg.sample_dim, 0.0, float(n), make_rng(cfg.seed, _TEST1_TAG, n, r))
        v_n = measure_variance(f, cfg.roi_dim)
        source = v_n if cfg.q_source == "measured" else float(n)
        out, k = filt(f, uniform_vrr(shape, source / cfg.v_target))
        v_in.append(v_n)
        v_out.append(measure_variance(out, cfg.roi_dim))
        iters.append(k)
    return {
        "sample_index": n,
        "v_expected": float(n),
        "v_measured_mean": float(np.mean(v_in)),
        "v_filtered_mean": float(np.mean(v_out)),
        "v_target": cfg.v_target,
        "iterations_mean": float(np.mean(iters)),
    }


def run_test1(cfg: Test1Config) -> list[dict]:
    """Zero-mean Gaussian samples with variance 1..n_samples filtered to ``v_target``."""
    filt = Filterer(FilterSpec.parse(cfg.filter_spec), cfg.bins)
    jobs = (delayed(_test1_sample)(cfg, filt, n) for n in range(1, cfg.n_samples + 1))
    return list(Parallel(n_jobs=cfg.n_jobs)(jobs))


# -- Test 2: Poisson counts -------------------------------------------------------------


@dataclass
class Test2Config:
    filter_spec: str = "recursive:3"
    n_samples: int = 100
    sample_dim: int = 128
    roi_dim: int = 100
    lambda_min: float = 10.0
    lambda_max: float = 1000.0
    u_target: float | None = None
    repeats: int = 20
    seed: int = 0
    q_source: str = "expected"
    bins: int = DEFAULT_BINS
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.u_target is None:
            self.u_target = 1.0 / self.lambda_max
        if self.roi_dim > self.sample_dim:
            raise ValueError("roi_dim must not exceed sample_dim")
        if self.n_samples < 1 or self.repeats < 1:
            raise ValueError("n_samples and repeats must be >= 1")
        if self.q_source not in ("expected", "counts"):
            raise ValueError(f"q_source must be 'expected' or 'counts', got {self.q_source!r}")
        FilterSpec.parse(self.filter_spec)

    def lambdas(self) -> np.ndarray:
        return np.linspace(self.lambda_min, self.lambda_max, self.n_samples)


TEST2_COLUMNS = ["k", "lambda", "u_expected", "u_measured", "u_filtered", "u_target",
                 "m_measured", "m_filtered", "iterations_mean"]


def _test2_sample(cfg: Test2Config, filt: Filterer, k: int, lam: float) -> dict:
    u_in, u_out, m_in, m_out, iters = [], [], [], [], []
    shape = (cfg.sample_dim, cfg.sample_dim)
    for r in range(cfg.repeats):
        counts = gen_poisson_sample(cfg.sample_dim, lam, make_rng(cfg.seed, _TEST2_TAG, k, r))
        if cfg.q_source == "expected":
            q = vrr_from_counts(np.full(shape, lam), cfg.u_target)
        else:
            q = vrr_from_counts(counts, cfg.u_target, floor=LOG_COUNT_FLOOR)
        out, n_it = filt(counts, q)
        u_in.append(measure_variance(log_counts(counts), cfg.roi_dim))
        u_out.append(measure_variance(log_counts(out), cfg.roi_dim))
        m_in.append(float(np.mean(counts)))
        m_out.append(float(np.mean(out)))
        iters.append(n_it)
    return {
        "k": k,
        "lambda": float(lam),
        "u_expected": 1.0 / lam,
        "u_measured": float(np.mean(u_in)),
        "u_filtered": float(np.mean(u_out)),
        "u_target": cfg.u_target,
        "m_measured": float(np.mean(m_in)),
        "m_filtered": float(np.mean(m_out)),
        "iterations_mean": float(np.mean(iters)),
    }


def run_test2(cfg: Test2Config) -> list[dict]:
    """Poisson samples with rates ``lambda_min..lambda_max`` filtered before the log."""
    filt = Filterer(FilterSpec.parse(cfg.filter_spec), cfg.bins)
    jobs = (delayed(_test2_sample)(cfg, filt, k, lam) for k, lam in enumerate(cfg.lambdas()))
    return list(Parallel(n_jobs=cfg.n_jobs)(jobs))


# -- tables -----------------------------------------------------------------------------


def emit_tables(L_list=(1, 2, 3), n_iters: int = 8) -> list[dict]:
    """Rows of maximum cumulative and incremental VRP per pass count.

    ``iteration`` counts passes from 1, so row ``m`` holds pass index ``m - 1``.
    """
    rows = []
    for m in range(1, n_iters + 1):
        row = {"iteration": m}
        for L in L_list:
            K = 2 * L + 1
            row[f"p_max_{K}x{K}"] = kn.p_max_at_iteration(m - 1, L)
        for L in L_list:
            K = 2 * L + 1
            row[f"r_max_{K}x{K}"] = kn.r_max_at_iteration(m - 1, L)
        rows.append(row)
    return rows


# -- CSV --------------------------------------------------------------------------------


def run_metadata(seed: int | None = None, config=None, **extra) -> dict:
    meta = {"version": f"vrfilter-{__version__}", "rng": RNG_ID, "poisson": POISSON_METHOD}
    if seed is not None:
        meta["seed"] = seed
    if config is not None:
        meta["config"] = ";".join(f"{k}={v}" for k, v in asdict(config).items() if k != "n_jobs")
    meta.update(extra)
    return meta


def format_csv(rows: list[dict], meta: dict | None = None, columns: list[str] | None = None) -> str:
    """CSV text with ``# key=value`` metadata lines before the header."""
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    return buf.getvalue()


def read_csv(text: str) -> tuple[dict, list[dict]]:
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        else:
            body.append(line)
    rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(body)]
    return meta, rows

