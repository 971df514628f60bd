"""Core image container, resampling, value transforms, and PFM/PGM I/O.

All pixel math is float64; PFM stores float32 on disk and the conversion
happens at the I/O boundary. Rasters are immutable after construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    AlreadyInverse,
    DimMismatch,
    IoFailure,
    MalformedHeader,
    NonFiniteValue,
    OutOfRange,
    UnexpectedEof,
    ZeroDimension,
)


class Raster:
    """Single-channel float64 image, row-major, top-down."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ZeroDimension(f"raster must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ZeroDimension(f"raster dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("raster contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Raster is immutable")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def constant(cls, height, width, value=0.0):
        return cls(np.full((height, width), float(value)))

    def __repr__(self):
        return f"Raster({self.width}x{self.height})"


class DepthSemantics(enum.Enum):
    DEPTH = "depth"
    INVERSE_DEPTH = "inverse_depth"


@dataclass(frozen=True)
class DepthMap:
    """Raster plus depth/inverse-depth semantics and an optional validity mask.

    ``inverse_offset`` records the maximum used by :func:`to_inverse_depth`
    so the transform can be undone.
    """

    raster: Raster
    semantics: DepthSemantics = DepthSemantics.DEPTH
    valid: np.ndarray | None = None
    inverse_offset: float | None = None

    def __post_init__(self):
        if self.valid is not None:
            mask = np.asarray(self.valid, dtype=bool)
            if mask.shape != self.raster.shape:
                raise DimMismatch(
                    f"valid mask shape {mask.shape} != raster {self.raster.shape}")
            mask.flags.writeable = False
            object.__setattr__(self, "valid", mask)

    @property
    def values(self):
        return self.raster.values

    def valid_mask(self):
        if self.valid is None:
            return np.ones(self.raster.shape, dtype=bool)
        return self.valid


# ---------------------------------------------------------------------------
# PFM ("Pf" grayscale; scale sign encodes byte order; rows bottom-up)

def _read_token(f):
    tok = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise UnexpectedEof("EOF while reading PFM header")
        if ch in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> Raster:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IoFailure(str(e)) from e
    with f:
        magic = _read_token(f)
        if magic == b"PF":
            raise MalformedHeader("color PFM not supported, expected 'Pf'")
        if magic != b"Pf":
            raise MalformedHeader(f"bad PFM magic {magic!r}")
        try:
            width = int(_read_token(f))
            height = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError as e:
            raise MalformedHeader(f"bad PFM header field: {e}") from e
        if width <= 0 or height <= 0:
            raise MalformedHeader(f"bad PFM dims {width}x{height}")
        if scale == 0.0:
            raise MalformedHeader("PFM scale must be nonzero")
        count = width * height
        buf = f.read(4 * count)
        if len(buf) != 4 * count:
            raise UnexpectedEof(
                f"PFM payload truncated: {len(buf)} of {4 * count} bytes")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(buf, dtype=dtype).reshape(height, width)
        data = data[::-1].astype(np.float64)  # bottom-up -> top-down
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue(f"non-finite values in {path}")
        return Raster(data)


def write_pfm(raster: Raster, path, little_endian=True):
    scale = -1.0 if little_endian else 1.0
    dtype = "<f4" if little_endian else ">f4"
    payload = raster.values[::-1].astype(dtype).tobytes()
    header = f"Pf\n{raster.width} {raster.height}\n{scale:.6f}\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise IoFailure(str(e)) from e


# ---------------------------------------------------------------------------
# Binary PGM (P5), maxval up to 65535, values mapped from [0, 1]

def write_pgm(raster: Raster, path, maxval=65535):
    if not 1 <= maxval <= 65535:
        raise OutOfRange(f"maxval {maxval} not in [1, 65535]")
    v = raster.values
    if v.min() < 0.0 or v.max() > 1.0:
        raise OutOfRange("PGM write expects values in [0, 1]")
    q = np.rint(v * maxval).astype(np.uint16)
    header = f"P5\n{raster.width} {raster.height}\n{maxval}\n".encode("ascii")
    payload = q.astype(">u2").tobytes() if maxval > 255 else q.astype("u1").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_pgm(path) -> Raster:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IoFailure(str(e)) from e
    with f:
        magic = _read_token(f)
        if magic != b"P5":
            raise MalformedHeader(f"bad PGM magic {magic!r}")
        try:
            width = int(_read_token(f))
            height = int(_read_token(f))
            maxval = int(_read_token(f))
        except ValueError as e:
            raise MalformedHeader(f"bad PGM header field: {e}") from e
        if width <= 0 or height <= 0 or not 1 <= maxval <= 65535:
            raise MalformedHeader("bad PGM dims or maxval")
        itemsize = 2 if maxval > 255 else 1
        buf = f.read(itemsize * width * height)
        if len(buf) != itemsize * width * height:
            raise UnexpectedEof("PGM payload truncated")
        dtype = ">u2" if maxval > 255 else "u1"
        q = np.frombuffer(buf, dtype=dtype).reshape(height, width)
        return Raster(q.astype(np.float64) / maxval)


# ---------------------------------------------------------------------------
# Resampling and value-domain transforms

def resize_bilinear(raster: Raster, new_w, new_h) -> Raster:
    """Bilinear resample with pixel-center mapping and clamp-to-edge borders."""
    if new_w < 1 or new_h < 1:
        raise ZeroDimension(f"target dims {new_w}x{new_h} must be positive")
    return Raster(kernels.resize_bilinear(raster.values, new_h, new_w))


def resize_depth(d: DepthMap, new_w, new_h) -> DepthMap:
    """Resample a depth map, preserving semantics. A validity mask is
    resampled with nearest-neighbor-style thresholding (>= 0.5)."""
    r = resize_bilinear(d.raster, new_w, new_h)
    valid = None
    if d.valid is not None:
        vf = kernels.resize_bilinear(d.valid.astype(np.float64), new_h, new_w)
        valid = vf >= 0.5
    return DepthMap(r, d.semantics, valid, d.inverse_offset)


def minmax_scale(d: DepthMap) -> DepthMap:
    """Affinely map the value range to [-1, 1]; constant input maps to zeros."""
    v = d.values
    lo, hi = v.min(), v.max()
    if hi == lo:
        out = np.zeros_like(v)
    else:
        out = (v - lo) / (hi - lo) * 2.0 - 1.0
    return DepthMap(Raster(out), d.semantics, d.valid, d.inverse_offset)


def to_inverse_depth(d: DepthMap) -> DepthMap:
    """Reverse the value order: out = max(d) - d, flagged as inverse depth."""
    if d.semantics is DepthSemantics.INVERSE_DEPTH:
        raise AlreadyInverse("depth map is already inverse depth")
    d_max = float(d.values.max())
    return DepthMap(Raster(d_max - d.values), DepthSemantics.INVERSE_DEPTH,
                    d.valid, inverse_offset=d_max)


def from_inverse_depth(d: DepthMap) -> DepthMap:
    """Undo to_inverse_depth using the stored offset."""
    if d.semantics is not DepthSemantics.INVERSE_DEPTH:
        raise AlreadyInverse("depth map is not inverse depth")
    offset = d.inverse_offset if d.inverse_offset is not None else float(d.values.max())
    return DepthMap(Raster(offset - d.values), DepthSemantics.DEPTH, d.valid)
