"""Raster containers, block pooling and raster file I/O."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np


class DimensionError(ValueError):
    """Raised when a pooling factor does not divide the raster dimensions."""


class RasterFormatError(ValueError):
    """Raised for malformed, nodata-bearing or non-finite raster files."""


@dataclass(frozen=True)
class ElevationMap:
    """Square-cell terrain raster. ``z[0]`` is the north row."""

    z: np.ndarray
    cell_size: float

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64, copy=True)
        if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 2:
            raise ValueError(f"elevation raster must be 2D with both dims >= 2, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("elevation raster contains non-finite values")
        if not (self.cell_size > 0 and np.isfinite(self.cell_size)):
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def rows(self) -> int:
        return self.z.shape[0]

    @property
    def cols(self) -> int:
        return self.z.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.z.shape

    def with_z(self, z: np.ndarray) -> "ElevationMap":
        return ElevationMap(z, self.cell_size)


@dataclass
class FlowState:
    """Water depth at cell centres, fluxes on the staggered interfaces.

    ``qx[i, j]`` is the flux from cell (i, j) to (i, j+1) and ``qy[i, j]``
    from (i, j) to (i+1, j), both in m^2/s.
    """

    h: np.ndarray
    qx: np.ndarray
    qy: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        rows, cols = self.h.shape
        if self.qx.shape != (rows, cols - 1) or self.qy.shape != (rows - 1, cols):
            raise ValueError(
                f"flux shapes {self.qx.shape}, {self.qy.shape} inconsistent with h {self.h.shape}"
            )

    @classmethod
    def dry(cls, shape: tuple[int, int]) -> "FlowState":
        rows, cols = shape
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols - 1)), np.zeros((rows - 1, cols)))

    def copy(self) -> "FlowState":
        return FlowState(self.h.copy(), self.qx.copy(), self.qy.copy(), self.t)

    def volume(self, dx: float) -> float:
        return float(self.h.sum() * dx * dx)


Raster = Union[np.ndarray, ElevationMap]


def _blocks(a: np.ndarray, k: int) -> np.ndarray:
    if k < 2:
        raise DimensionError(f"pooling factor must be >= 2, got {k}")
    rows, cols = a.shape
    if rows % k or cols % k:
        raise DimensionError(f"factor {k} does not divide raster dims {a.shape}")
    return a.reshape(rows // k, k, cols // k, k)


def avg_pool(raster: Raster, k: int):
    """Block mean over k x k tiles. ElevationMaps come back with cell_size * k."""
    if isinstance(raster, ElevationMap):
        return ElevationMap(avg_pool(raster.z, k), raster.cell_size * k)
    return _blocks(np.asarray(raster, dtype=np.float64), k).mean(axis=(1, 3))


def max_pool(raster: Raster, k: int):
    if isinstance(raster, ElevationMap):
        return ElevationMap(max_pool(raster.z, k), raster.cell_size * k)
    return _blocks(np.asarray(raster, dtype=np.float64), k).max(axis=(1, 3))


def upsample_block(a: np.ndarray, k: int) -> np.ndarray:
    """Adjoint-style spread of a coarse raster back onto k x k tiles (no scaling)."""
    return np.kron(a, np.ones((k, k)))


# ---------------------------------------------------------------------------
# ESRI ASCII grid

_REQUIRED = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")
_OPTIONAL = ("nodata_value", "xllcenter", "yllcenter")


def read_raster(path: str | Path) -> ElevationMap:
    """Read an ESRI ASCII grid. Any nodata cell is an error, not a mask."""
    path = Path(path)
    if path.suffix == ".bin":
        return read_raw(path)
    lines = path.read_text().split("\n")
    header: dict[str, str] = {}
    pos = 0
    while pos < len(lines):
        parts = lines[pos].split()
        if not parts:
            pos += 1
            continue
        key = parts[0].lower()
        if key[0].isdigit() or key[0] in "+-.":
            break
        if len(parts) != 2:
            raise RasterFormatError(f"{path}: malformed header line {lines[pos]!r}")
        if key in ("dx", "dy"):
            raise RasterFormatError(f"{path}: rectangular cells ({key}) are not supported")
        if key not in _REQUIRED and key not in _OPTIONAL:
            raise RasterFormatError(f"{path}: unknown header key {parts[0]!r}")
        header[key] = parts[1]
        pos += 1
    if "xllcenter" in header:
        header.setdefault("xllcorner", header.pop("xllcenter"))
    if "yllcenter" in header:
        header.setdefault("yllcorner", header.pop("yllcenter"))
    missing = [k for k in _REQUIRED if k not in header]
    if missing:
        raise RasterFormatError(f"{path}: missing header keys {missing}")
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cell_size = float(header["cellsize"])
        values = np.array(" ".join(lines[pos:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: {exc}") from None
    if values.size != ncols * nrows:
        raise RasterFormatError(f"{path}: expected {ncols * nrows} values, found {values.size}")
    if "nodata_value" in header and np.any(values == float(header["nodata_value"])):
        raise RasterFormatError(f"{path}: raster contains NODATA cells")
    if not np.all(np.isfinite(values)):
        raise RasterFormatError(f"{path}: raster contains non-finite values")
    return ElevationMap(values.reshape(nrows, ncols), cell_size)


def write_raster(raster: Raster, path: str | Path, cell_size: float | None = None,
                 xll: float = 0.0, yll: float = 0.0) -> Path:
    path = Path(path)
    if isinstance(raster, ElevationMap):
        z, cell_size = raster.z, raster.cell_size
    else:
        z = np.asarray(raster, dtype=np.float64)
        if cell_size is None:
            raise ValueError("cell_size required when writing a bare array")
    if path.suffix == ".bin":
        return write_raw(z, cell_size, path)
    nrows, ncols = z.shape
    out = [
        f"NCOLS {ncols}",
        f"NROWS {nrows}",
        f"XLLCORNER {xll!r}",
        f"YLLCORNER {yll!r}",
        f"CELLSIZE {float(cell_size)!r}",
    ]
    # 17 significant digits round-trips float64 exactly
    out.extend(" ".join(f"{v:.17g}" for v in row) for row in z)
    path.write_text("\n".join(out) + "\n")
    return path


# ---------------------------------------------------------------------------
# raw little-endian float64: uint32 rows, uint32 cols, float64 cell_size, data

_RAW_HEADER = struct.Struct("<IId")


def write_raw(z: np.ndarray, cell_size: float, path: str | Path) -> Path:
    path = Path(path)
    z = np.ascontiguousarray(z, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(z.shape[0], z.shape[1], float(cell_size)))
        fh.write(z.tobytes())
    return path


def read_raw(path: str | Path) -> ElevationMap:
    data = Path(path).read_bytes()
    if len(data) < _RAW_HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    rows, cols, cell_size = _RAW_HEADER.unpack_from(data)
    body = data[_RAW_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise RasterFormatError(f"{path}: expected {rows * cols * 8} data bytes, found {len(body)}")
    z = np.frombuffer(body, dtype="<f8").reshape(rows, cols)
    if not np.all(np.isfinite(z)):
        raise RasterFormatError(f"{path}: raster contains non-finite values")
    return ElevationMap(z, cell_size)


def write_pgm(a: np.ndarray, path: str | Path, lo: float | None = None, hi: float | None = None) -> Path:
    """8-bit binary greyscale preview, linearly scaled from [lo, hi] (default data range)."""
    a = np.asarray(a, dtype=np.float64)
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    pix = np.clip(np.round((a - lo) / span * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())
    return path
