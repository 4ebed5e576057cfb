"""Raster interchange: FRAW (raw little-endian floats) and PGM (P2/P5).

FRAW layout: a 32-byte ASCII header ``"FRAW 1 <W> <H> <f32|f64>"`` padded
with spaces and terminated by ``"\\n"``, followed by ``W*H`` row-major
little-endian samples.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

FRAW_MAGIC = "FRAW"
FRAW_VERSION = 1
FRAW_HEADER_SIZE = 32
_FRAW_DTYPES = {"f32": "<f4", "f64": "<f8"}
# refuse headers announcing more than this many samples
MAX_PIXELS = 1 << 31


class RasterFormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- FRAW -------------------------------------------------------------------------


def fraw_bytes(raster, kind: str = "f64") -> bytes:
    if kind not in _FRAW_DTYPES:
        raise ValueError(f"FRAW value kind must be one of {sorted(_FRAW_DTYPES)}, got {kind!r}")
    a = np.asarray(raster)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"raster must be a non-empty 2D array, got shape {a.shape}")
    H, W = a.shape
    head = f"{FRAW_MAGIC} {FRAW_VERSION} {W} {H} {kind}"
    if len(head) > FRAW_HEADER_SIZE - 1:
        raise ValueError("raster dimensions too large for the FRAW header")
    header = head.ljust(FRAW_HEADER_SIZE - 1).encode("ascii") + b"\n"
    return header + np.ascontiguousarray(a, dtype=_FRAW_DTYPES[kind]).tobytes()


def parse_fraw(data: bytes) -> tuple[np.ndarray, str]:
    """Decode FRAW bytes into a float64 raster and its stored value kind."""
    if len(data) < FRAW_HEADER_SIZE:
        raise RasterFormatError(f"FRAW header truncated: {len(data)} of {FRAW_HEADER_SIZE} bytes")
    try:
        fields = data[:FRAW_HEADER_SIZE].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise RasterFormatError("FRAW header is not ASCII") from exc
    if not fields or fields[0] != FRAW_MAGIC:
        raise RasterFormatError(f"bad magic {data[:4]!r}, expected {FRAW_MAGIC!r}")
    if len(fields) != 5 or data[FRAW_HEADER_SIZE - 1:FRAW_HEADER_SIZE] != b"\n":
        raise RasterFormatError("malformed FRAW header")
    _, version, w, h, kind = fields
    try:
        version, W, H = int(version), int(w), int(h)
    except ValueError as exc:
        raise RasterFormatError(f"non-integer field in FRAW header: {fields}") from exc
    if version != FRAW_VERSION:
        raise RasterFormatError(f"unsupported FRAW version {version}")
    if W <= 0 or H <= 0:
        raise RasterFormatError(f"FRAW dimensions must be positive, got {W}x{H}")
    if W * H > MAX_PIXELS:
        raise RasterFormatError(f"FRAW dimensions {W}x{H} exceed {MAX_PIXELS} pixels")
    if kind not in _FRAW_DTYPES:
        raise RasterFormatError(f"unknown FRAW value kind {kind!r}")
    dtype = np.dtype(_FRAW_DTYPES[kind])
    expected = W * H * dtype.itemsize
    got = len(data) - FRAW_HEADER_SIZE
    if got != expected:
        raise RasterFormatError(f"FRAW payload is {got} bytes, expected {expected} for {W}x{H} {kind}")
    arr = np.frombuffer(data, dtype=dtype, offset=FRAW_HEADER_SIZE).reshape(H, W)
    return arr.astype(np.float64), kind


def write_fraw(raster, path, kind: str = "f64") -> None:
    atomic_write_bytes(path, fraw_bytes(raster, kind))


def read_fraw(path) -> np.ndarray:
    return parse_fraw(Path(path).read_bytes())[0]


# -- PGM --------------------------------------------------------------------------------


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def pgm_scale(raster, maxval: int = 255, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Map raster values to integers in ``[0, maxval]``.

    ``g = round((x - vmin) / (vmax - vmin) * maxval)``, rounding half away from
    zero, then clipped.  When neither bound is given and the data already lie
    in ``[0, maxval]`` the mapping is the identity (``vmin=0, vmax=maxval``);
    otherwise missing bounds default to the data minimum and maximum.
    """
    a = np.asarray(raster, dtype=np.float64)
    if vmin is None and vmax is None and a.min() >= 0 and a.max() <= maxval:
        vmin, vmax = 0.0, float(maxval)
    vmin = float(a.min()) if vmin is None else float(vmin)
    vmax = float(a.max()) if vmax is None else float(vmax)
    if vmax <= vmin:
        return np.zeros(a.shape, dtype=np.int64)
    g = _round_half_away((a - vmin) / (vmax - vmin) * maxval)
    return np.clip(g, 0, maxval).astype(np.int64)


def pgm_bytes(raster, maxval: int = 255, binary: bool = True, vmin=None, vmax=None) -> bytes:
    if not 1 <= maxval <= 65535:
        raise ValueError(f"PGM maxval must be in [1, 65535], got {maxval}")
    g = pgm_scale(raster, maxval, vmin, vmax)
    H, W = g.shape
    if binary:
        dtype = ">u1" if maxval < 256 else ">u2"
        return f"P5\n{W} {H}\n{maxval}\n".encode("ascii") + g.astype(dtype).tobytes()
    lines = [" ".join(str(v) for v in row) for row in g]
    return (f"P2\n{W} {H}\n{maxval}\n" + "\n".join(lines) + "\n").encode("ascii")


def write_pgm(raster, path, maxval: int = 255, binary: bool = True, vmin=None, vmax=None) -> None:
    atomic_write_bytes(path, pgm_bytes(raster, maxval, binary, vmin, vmax))


def _pgm_tokens(data: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise RasterFormatError("PGM header truncated")
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise RasterFormatError(f"unsupported PNM format {magic!r}; only P2/P5 greyscale is read")
    (w, h, mv), pos = _pgm_tokens(data, 3, 2)
    try:
        W, H, maxval = int(w), int(h), int(mv)
    except ValueError as exc:
        raise RasterFormatError("non-integer PGM header field") from exc
    if W <= 0 or H <= 0:
        raise RasterFormatError(f"PGM dimensions must be positive, got {W}x{H}")
    if not 1 <= maxval <= 65535:
        raise RasterFormatError(f"PGM maxval {maxval} outside [1, 65535]")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u1" if maxval < 256 else ">u2")
        expected = W * H * dtype.itemsize
        payload = data[pos:pos + expected]
        if len(payload) != expected:
            raise RasterFormatError(f"PGM payload is {len(payload)} bytes, expected {expected}")
        g = np.frombuffer(payload, dtype=dtype).reshape(H, W)
    else:
        values = data[pos:].split()
        if len(values) < W * H:
            raise RasterFormatError(f"PGM has {len(values)} samples, expected {W * H}")
        g = np.array([int(v) for v in values[:W * H]], dtype=np.int64).reshape(H, W)
    if g.max() > maxval:
        raise RasterFormatError(f"PGM sample exceeds maxval {maxval}")
    return g.astype(np.float64)


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def read_raster(path) -> np.ndarray:
    """Read FRAW or PGM, chosen by the leading magic bytes."""
    data = Path(path).read_bytes()
    if data[:4] == FRAW_MAGIC.encode():
        return parse_fraw(data)[0]
    if data[:1] == b"P":
        return parse_pgm(data)
    raise RasterFormatError(f"{path}: neither FRAW nor PGM")


def write_raster(raster, path, maxval: int = 255) -> None:
    """Write PGM for ``.pgm`` paths, FRAW (float64) otherwise."""
    if str(path).lower().endswith(".pgm"):
        write_pgm(raster, path, maxval)
    else:
        write_fraw(raster, path)
