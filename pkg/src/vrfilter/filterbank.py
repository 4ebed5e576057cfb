"""Precomputed atomic-kernel filter banks indexed linearly by VRP.

A bank for pass ``n`` covers cumulative VRP ``[p_min(n), p_max(n)]`` with
``bins`` uniformly spaced entries.  Entry ``i`` stores the plain atomic kernel
``A_L(a_i)`` whose cumulative VRP after ``n`` box passes equals the bin value.
Parameters ``a_i`` come either from inverting a sampled lookup table or, for
3x3 kernels and the first three passes, from closed-form roots.
"""
from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as kn

DEFAULT_BINS = 1024
DEFAULT_LOOKUP_SAMPLES = 1000
DEFAULT_N_REUSE = 2

BANK_MAGIC = b"SVRB"
BANK_VERSION = 1
KIND_FIXED = 0
KIND_RECURSIVE = 1

# relative slack when checking a requested VRP against a range endpoint
_RANGE_RTOL = 1e-12


class BankFormatError(ValueError):
    """A bank file is malformed, truncated or fails its checksum."""


class BankMismatchError(ValueError):
    """A bank does not match what the caller asked for (size, kind)."""


@dataclass(frozen=True, eq=False)
class VrpLookupTable:
    a_samples: np.ndarray
    p_values: np.ndarray
    iteration: int
    L: int

    @property
    def p_min(self) -> float:
        return float(self.p_values[0])

    @property
    def p_max(self) -> float:
        return float(self.p_values[-1])


def build_lookup_table(L: int, n: int = 0, samples: int = DEFAULT_LOOKUP_SAMPLES) -> VrpLookupTable:
    """Tabulate ``vrp_iterated(a, n, L)`` on a uniform grid of ``a`` in [0, 1]."""
    if samples < 2:
        raise ValueError(f"need at least 2 lookup samples, got {samples}")
    a = np.linspace(0.0, 1.0, samples)
    p = kn.vrp_iterated_many(a, n, L)
    if np.any(np.diff(p) <= 0):
        raise RuntimeError(f"VRP table for L={L}, n={n} is not strictly increasing")
    return VrpLookupTable(a_samples=a, p_values=p, iteration=n, L=L)


def _check_range(p, lo: float, hi: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    slack = _RANGE_RTOL * hi
    if np.any(p < lo - slack) or np.any(p > hi + slack) or np.any(~np.isfinite(p)):
        raise ValueError(f"VRP value(s) outside [{lo:.6g}, {hi:.6g}]")
    return np.clip(p, lo, hi)


def invert_vrp(table: VrpLookupTable, p):
    """Return ``a`` with ``P(a) = p`` by linear interpolation in the table.

    Accepts a scalar or an array.  Range endpoints map exactly to 0 and 1.
    """
    scalar = np.ndim(p) == 0
    pc = _check_range(p, table.p_min, table.p_max)
    a = np.interp(pc, table.p_values, table.a_samples)
    return float(a) if scalar else a


def a_from_p_closed(p, n: int):
    """Closed-form ``a`` for a 3x3 atomic kernel at pass ``n`` in {0, 1, 2}.

    With ``t = sqrt(p)`` the VRP equations reduce to quadratics in ``a``:

    * n = 0: ``a = (t - 1) / (2 + sqrt(2t(3 - t)))``
    * n = 1: ``a = -1/2 + sqrt(t / (4(9 - 2t)))``
    * n = 2: ``a = (32t - 162 + sqrt(6t(81 - 13t))) / (324 - 58t)``

    The n = 0 form is the rationalized root, finite at ``p = 4`` (a = 1/4).
    """
    if n not in (0, 1, 2):
        raise ValueError(f"closed form exists only for n in {{0, 1, 2}}, got {n}")
    scalar = np.ndim(p) == 0
    pc = _check_range(p, kn.p_min_at_iteration(n, 1), kn.p_max_at_iteration(n, 1))
    t = np.sqrt(pc)
    if n == 0:
        a = (t - 1.0) / (2.0 + np.sqrt(np.maximum(2.0 * t * (3.0 - t), 0.0)))
    elif n == 1:
        a = -0.5 + np.sqrt(t / (4.0 * (9.0 - 2.0 * t)))
    else:
        a = (32.0 * t - 162.0 + np.sqrt(np.maximum(6.0 * t * (81.0 - 13.0 * t), 0.0))) / (
            324.0 - 58.0 * t
        )
    a = np.clip(a, 0.0, 1.0)
    return float(a) if scalar else a


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Kernels for one pass, indexed linearly by cumulative VRP.

    ``p_values`` holds the VRP each stored kernel actually achieves at this
    pass, which can differ from the nominal bin value by the inversion error.
    """

    L: int
    iteration: int
    p_min: float
    p_max: float
    a_values: np.ndarray
    p_values: np.ndarray
    kernels: np.ndarray

    @property
    def bin_count(self) -> int:
        return int(self.a_values.size)

    @property
    def K(self) -> int:
        return 2 * self.L + 1

    @property
    def bin_width(self) -> float:
        return (self.p_max - self.p_min) / (self.bin_count - 1)

    def bin_p(self, i) -> np.ndarray:
        return self.p_min + np.asarray(i) * self.bin_width

    def index_for(self, p):
        """Bin index for VRP ``p`` (clamped to the bank range)."""
        s = (np.asarray(p, dtype=np.float64) - self.p_min) / (self.p_max - self.p_min)
        return position_to_index(s, self.bin_count)


def position_to_index(s, bins: int):
    """Map a normalized position in [0, 1] to the nearest of ``bins`` bins."""
    idx = np.floor(np.clip(s, 0.0, 1.0) * (bins - 1) + 0.5).astype(np.intp)
    return int(idx) if np.ndim(idx) == 0 else idx


def _make_bank(L: int, n: int, a: np.ndarray) -> FilterBank:
    a = np.asarray(a, dtype=np.float64).copy()
    # endpoints are exact by construction: delta (no extra reduction) and box
    a[0], a[-1] = 0.0, 1.0
    p = kn.vrp_iterated_many(a, n, L)
    ks = kn.atomic_kernels(a, L)
    for arr in (a, p, ks):
        arr.setflags(write=False)
    return FilterBank(
        L=L,
        iteration=n,
        p_min=kn.p_min_at_iteration(n, L),
        p_max=kn.p_max_at_iteration(n, L),
        a_values=a,
        p_values=p,
        kernels=ks,
    )


def build_bank(
    L: int,
    n: int = 0,
    bins: int = DEFAULT_BINS,
    closed_form: bool = False,
    samples: int = DEFAULT_LOOKUP_SAMPLES,
) -> FilterBank:
    """Bank for pass ``n`` spanning ``[p_min(n), p_max(n)]`` with ``bins`` kernels."""
    if bins < 2:
        raise ValueError(f"a bank needs at least 2 bins, got {bins}")
    p_lo, p_hi = kn.p_min_at_iteration(n, L), kn.p_max_at_iteration(n, L)
    p_bins = np.linspace(p_lo, p_hi, bins)
    if closed_form:
        if L != 1:
            raise ValueError("closed-form banks exist only for L = 1")
        a = a_from_p_closed(p_bins, n)
    else:
        a = invert_vrp(build_lookup_table(L, n, samples), p_bins)
    return _make_bank(L, n, a)


def build_fixed_bank(L: int, bins: int = DEFAULT_BINS, samples: int = DEFAULT_LOOKUP_SAMPLES) -> FilterBank:
    """Single-pass bank over ``[1, K**2]``."""
    return build_bank(L, 0, bins, samples=samples)


@dataclass(eq=False)
class RecursiveBankSet:
    """Banks for passes ``0..n_reuse``; later passes reuse the last bank.

    For a pass ``n`` whose own bank is not stored, the reused bank is indexed
    by normalized incremental position ``(r - 1) / (r_max(n) - 1)``.  The
    incremental VRP each bin really achieves at pass ``n`` is recomputed from
    its ``a`` value (:meth:`achieved_r`).
    """

    banks: list[FilterBank]
    n_reuse: int
    closed_form: bool = False
    _r_cache: dict = field(default_factory=dict, repr=False)

    @property
    def L(self) -> int:
        return self.banks[0].L

    @property
    def bin_count(self) -> int:
        return self.banks[0].bin_count

    def bank_for(self, n: int) -> FilterBank:
        return self.banks[min(n, self.n_reuse)]

    def r_max(self, n: int) -> float:
        return kn.r_max_at_iteration(n, self.L)

    def achieved_r(self, n: int) -> np.ndarray:
        """Incremental VRP of every bin of ``bank_for(n)`` when used at pass ``n``."""
        r = self._r_cache.get(n)
        if r is None:
            bank = self.bank_for(n)
            p_prev = kn.p_min_at_iteration(n, self.L)
            if bank.iteration == n:
                r = bank.p_values / p_prev
            else:
                r = kn.vrp_iterated_many(bank.a_values, n, self.L) / p_prev
            r.setflags(write=False)
            self._r_cache[n] = r
        return r


def build_recursive_banks(
    L: int,
    bins: int = DEFAULT_BINS,
    use_closed_form: bool = False,
    n_reuse: int = DEFAULT_N_REUSE,
    samples: int = DEFAULT_LOOKUP_SAMPLES,
) -> RecursiveBankSet:
    if use_closed_form and L != 1:
        raise ValueError("closed-form banks exist only for L = 1")
    if use_closed_form and n_reuse > 2:
        raise ValueError("closed form covers passes 0..2 only; n_reuse must be <= 2")
    if n_reuse < 0:
        raise ValueError(f"n_reuse must be >= 0, got {n_reuse}")
    banks = [build_bank(L, n, bins, use_closed_form, samples) for n in range(n_reuse + 1)]
    return RecursiveBankSet(banks=banks, n_reuse=n_reuse, closed_form=use_closed_form)


def select_kernel(bank: FilterBank, p: float) -> np.ndarray:
    """Kernel of the bin nearest to ``p`` (clamped)."""
    return bank.kernels[bank.index_for(p)]


# -- persistence ---------------------------------------------------------------

_HEADER = struct.Struct("<4sHBBIII")
_BANK_HEADER = struct.Struct("<Idd")
_CRC = struct.Struct("<I")


def _as_set(obj) -> tuple[int, list[FilterBank], int, bool]:
    if isinstance(obj, FilterBank):
        return KIND_FIXED, [obj], 0, False
    if isinstance(obj, RecursiveBankSet):
        return KIND_RECURSIVE, list(obj.banks), obj.n_reuse, obj.closed_form
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_bank(obj: FilterBank | RecursiveBankSet) -> bytes:
    kind, banks, n_reuse, closed = _as_set(obj)
    L, bins = banks[0].L, banks[0].bin_count
    buf = io.BytesIO()
    buf.write(_HEADER.pack(BANK_MAGIC, BANK_VERSION, kind, int(closed), L, bins, n_reuse))
    for b in banks:
        if b.L != L or b.bin_count != bins:
            raise ValueError("all banks in a set must share L and bin count")
        buf.write(_BANK_HEADER.pack(b.iteration, b.p_min, b.p_max))
        for arr in (b.a_values, b.p_values, b.kernels):
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = buf.getvalue()
    return payload + _CRC.pack(zlib.crc32(payload))


def loads_bank(data: bytes, expect_L: int | None = None, expect_kind: str | None = None):
    if len(data) < _HEADER.size + _CRC.size:
        raise BankFormatError(f"bank file too short ({len(data)} bytes)")
    magic, version, kind, closed, L, bins, n_reuse = _HEADER.unpack_from(data, 0)
    if magic != BANK_MAGIC:
        raise BankFormatError(f"bad magic {magic!r}, expected {BANK_MAGIC!r}")
    if version != BANK_VERSION:
        raise BankFormatError(f"unsupported bank format version {version}")
    if kind not in (KIND_FIXED, KIND_RECURSIVE):
        raise BankFormatError(f"unknown bank kind {kind}")
    K = 2 * L + 1
    nbanks = 1 if kind == KIND_FIXED else n_reuse + 1
    per_bank = _BANK_HEADER.size + 8 * bins * (2 + K * K)
    expected = _HEADER.size + nbanks * per_bank + _CRC.size
    if len(data) != expected:
        raise BankFormatError(f"bank payload is {len(data)} bytes, expected {expected}")
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if crc != zlib.crc32(data[: -_CRC.size]):
        raise BankFormatError("bank checksum mismatch")

    kind_name = "fixed" if kind == KIND_FIXED else "recursive"
    if expect_L is not None and expect_L != L:
        raise BankMismatchError(f"bank was built for L={L}, requested L={expect_L}")
    if expect_kind is not None and expect_kind != kind_name:
        raise BankMismatchError(f"bank is {kind_name}, requested {expect_kind}")

    off = _HEADER.size
    banks = []
    for _ in range(nbanks):
        n, p_min, p_max = _BANK_HEADER.unpack_from(data, off)
        off += _BANK_HEADER.size
        arrays = []
        for count, shape in ((bins, (bins,)), (bins, (bins,)), (bins * K * K, (bins, K, K))):
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
            arrays.append(arr.astype(np.float64))
            off += 8 * count
        for arr in arrays:
            arr.setflags(write=False)
        banks.append(FilterBank(L, n, p_min, p_max, *arrays))
    if kind == KIND_FIXED:
        return banks[0]
    return RecursiveBankSet(banks=banks, n_reuse=n_reuse, closed_form=bool(closed))


def save_bank(obj: FilterBank | RecursiveBankSet, path) -> None:
    Path(path).write_bytes(dumps_bank(obj))


def load_bank(path, expect_L: int | None = None, expect_kind: str | None = None):
    return loads_bank(Path(path).read_bytes(), expect_L, expect_kind)


def dump_text(obj: FilterBank | RecursiveBankSet) -> str:
    """One line per bin (``index p a``), one block per bank."""
    _, banks, n_reuse, closed = _as_set(obj)
    lines = []
    for b in banks:
        lines.append(
            f"# bank iteration={b.iteration} L={b.L} bins={b.bin_count} "
            f"p_min={b.p_min:.10g} p_max={b.p_max:.10g}"
        )
        for i, (p, a) in enumerate(zip(b.p_values, b.a_values)):
            lines.append(f"{i} {p:.10g} {a:.10g}")
    return "\n".join(lines) + "\n"


def banks_equal(x, y) -> bool:
    """Bit-exact comparison of two banks or bank sets."""
    kx, bx, rx, cx = _as_set(x)
    ky, by, ry, cy = _as_set(y)
    if (kx, rx, cx, len(bx)) != (ky, ry, cy, len(by)):
        return False
    for u, v in zip(bx, by):
        if (u.L, u.iteration) != (v.L, v.iteration):
            return False
        if struct.pack("<dd", u.p_min, u.p_max) != struct.pack("<dd", v.p_min, v.p_max):
            return False
        for s, t in ((u.a_values, v.a_values), (u.p_values, v.p_values), (u.kernels, v.kernels)):
            if s.shape != t.shape or s.tobytes() != t.tobytes():
                return False
    return True

