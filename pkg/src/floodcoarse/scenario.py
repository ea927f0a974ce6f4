"""Synthetic floodplain terrains and automatic boundary conditions.

Every terrain is a base surface ``slope * dx * j + slope_y * dx * i`` (``slope``
is dz/dx toward the east, so a negative slope drains east; ``slope_y`` is dz/dy
toward the south) plus stamped features. Rows run
north to south. Optional noise is smoothed, zero-mean, and masked off feature
crests so crest heights stay exact.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from .grid import ElevationMap
from .solver import BoundaryConditions, Segment

KINDS = ("SlopedPlane", "Valley", "RiverChannel", "EmbankmentRidge", "CanalWithLevees",
         "NotchedEmbankment")


@dataclass(frozen=True)
class TerrainSpec:
    kind: str = "Valley"
    rows: int = 128
    cols: int = 128
    cell_size: float = 16.0
    slope: float = -0.0005
    slope_y: float = 0.0
    # Valley / RiverChannel cross slope toward the centre line
    side_slope: float = 0.002
    center_row: int | None = None
    channel_width: int = 4
    channel_depth: float = 1.5
    # EmbankmentRidge / NotchedEmbankment: ridge along x at ridge_row
    ridge_row: int | None = None
    ridge_width: int = 2
    ridge_height: float = 2.0
    notch_col: int | None = None
    notch_width: int = 2
    # CanalWithLevees
    levee_width: int = 2
    levee_height: float = 1.5
    noise: float = 0.0
    noise_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}; expected one of {KINDS}")
        if self.rows < 2 or self.cols < 2 or not self.cell_size > 0:
            raise ValueError("terrain needs rows, cols >= 2 and a positive cell size")

    def with_(self, **kw) -> "TerrainSpec":
        return replace(self, **kw)

    @property
    def mid_row(self) -> int:
        return self.rows // 2 if self.center_row is None else self.center_row

    @property
    def ridge(self) -> int:
        return self.rows // 2 if self.ridge_row is None else self.ridge_row

    @property
    def notch(self) -> int:
        return self.cols // 2 - self.notch_width // 2 if self.notch_col is None else self.notch_col

    def notch_cells(self) -> tuple[slice, slice]:
        return (slice(self.ridge, self.ridge + self.ridge_width),
                slice(self.notch, self.notch + self.notch_width))


def _check_band(start: int, width: int, limit: int, what: str) -> None:
    if width < 1 or start < 0 or start + width > limit:
        raise ValueError(f"{what} [{start}, {start + width}) exceeds grid bounds [0, {limit})")


def generate(spec: TerrainSpec) -> ElevationMap:
    """Build the terrain raster for ``spec`` (deterministic per seed)."""
    rows, cols, dx = spec.rows, spec.cols, spec.cell_size
    jj = np.arange(cols, dtype=np.float64)[None, :]
    ii = np.arange(rows, dtype=np.float64)[:, None]
    z = spec.slope * dx * jj + spec.slope_y * dx * ii
    crest = np.zeros((rows, cols), dtype=bool)
    kind = spec.kind

    if kind in ("Valley", "RiverChannel"):
        z = z + spec.side_slope * dx * np.abs(ii - spec.mid_row)
    if kind == "RiverChannel":
        top = spec.mid_row - spec.channel_width // 2
        _check_band(top, spec.channel_width, rows, "channel")
        z[top:top + spec.channel_width] -= spec.channel_depth
    if kind in ("EmbankmentRidge", "NotchedEmbankment"):
        _check_band(spec.ridge, spec.ridge_width, rows, "ridge")
        band = slice(spec.ridge, spec.ridge + spec.ridge_width)
        z[band] += spec.ridge_height
        crest[band] = True
        if kind == "NotchedEmbankment":
            _check_band(spec.notch, spec.notch_width, cols, "notch")
            rs, cs = spec.notch_cells()
            z[rs, cs] -= spec.ridge_height
    if kind == "CanalWithLevees":
        top = spec.mid_row - spec.channel_width // 2
        lw = spec.levee_width
        _check_band(top - lw, spec.channel_width + 2 * lw, rows, "canal with levees")
        z[top:top + spec.channel_width] -= spec.channel_depth
        z[top - lw:top] += spec.levee_height
        z[top + spec.channel_width:top + spec.channel_width + lw] += spec.levee_height
        crest[top - lw:top] = True
        crest[top + spec.channel_width:top + spec.channel_width + lw] = True

    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        n = gaussian_filter(rng.standard_normal((rows, cols)), spec.noise_sigma, mode="reflect")
        n -= n.mean()
        n *= spec.noise / max(np.abs(n).max(), 1e-300)
        z = z + np.where(crest, 0.0, n)
    return ElevationMap(z, dx)


# ---------------------------------------------------------------------------
# boundary conditions

def _boundary_cycle(rows: int, cols: int) -> list[tuple[str, int, tuple[int, int]]]:
    """Boundary cells clockwise from the NW corner as (edge, index along edge, cell)."""
    out = [("N", j, (0, j)) for j in range(cols)]
    out += [("E", i, (i, cols - 1)) for i in range(1, rows)]
    out += [("S", j, (rows - 1, j)) for j in range(cols - 2, -1, -1)]
    out += [("W", i, (i, 0)) for i in range(rows - 2, 0, -1)]
    return out


_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}


def _corner_edge(z: np.ndarray, cell: tuple[int, int], edge: str, pos: int) -> tuple[str, int]:
    """A corner lies on two edges; keep the one along which the ground stays lowest.

    Each corner is the end of one edge and the start of the next in the
    clockwise scan; a tie goes to the next edge.
    """
    rows, cols = z.shape
    i, j = cell
    if i not in (0, rows - 1) or j not in (0, cols - 1):
        return edge, pos
    di = 1 if i == 0 else -1
    dj = 1 if j == 0 else -1
    row_edge = "N" if i == 0 else "S"  # runs along the row; neighbour (i, j + dj)
    col_edge = "W" if j == 0 else "E"  # runs along the column; neighbour (i + di, j)
    along_row, along_col = z[i, j + dj], z[i + di, j]
    incoming, outgoing = {(0, 0): ("W", "N"), (0, cols - 1): ("N", "E"),
                          (rows - 1, cols - 1): ("E", "S"), (rows - 1, 0): ("S", "W")}[(i, j)]
    nb = {row_edge: along_row, col_edge: along_col}
    chosen = outgoing if nb[outgoing] <= nb[incoming] else incoming
    return chosen, (j if chosen in ("N", "S") else i)


def centered_segment(edge: str, center: int, width: int, edge_len: int) -> Segment:
    width = max(1, min(width, edge_len))
    start = min(max(center - width // 2, 0), edge_len - width)
    return Segment(edge, start, width)


def _edge_len(edge: str, shape: tuple[int, int]) -> int:
    return shape[1] if edge in ("N", "S") else shape[0]


def auto_bc(z: ElevationMap, width_m: float = 400.0, discharge: float = 100.0,
            outflux_slope: float = 1e-3) -> BoundaryConditions:
    """Outflux at the lowest boundary cell, influx centred on the opposite edge.

    Ties between equal boundary cells go to the first in a clockwise scan
    from the NW corner.
    """
    if width_m < z.cell_size:
        raise ValueError("boundary width must be at least one cell")
    shape = z.shape
    width = int(round(width_m / z.cell_size))
    best = None
    for edge, pos, cell in _boundary_cycle(*shape):
        if best is None or z.z[cell] < best[0]:
            best = (z.z[cell], edge, pos, cell)
    _, edge, pos, cell = best
    edge, pos = _corner_edge(z.z, cell, edge, pos)
    out_seg = centered_segment(edge, pos, width, _edge_len(edge, shape))
    in_edge = _OPPOSITE[edge]
    n_in = _edge_len(in_edge, shape)
    in_seg = centered_segment(in_edge, n_in // 2, width, n_in)
    return BoundaryConditions(in_seg, discharge, out_seg, outflux_slope)


def bc_grid(z: ElevationMap, n_locations: int, discharges, width_m: float = 400.0,
            outflux_slope: float = 1e-3) -> list[BoundaryConditions]:
    """Influx centres spaced equally around the boundary, outflux centred on the opposite edge."""
    if n_locations < 1:
        raise ValueError("need at least one influx location")
    rows, cols = z.shape
    width = int(round(width_m / z.cell_size))
    perimeter = 2 * (rows + cols)
    out = []
    for m in range(n_locations):
        # arc-length position measured clockwise from the NW corner, offset half a spacing
        s = (m + 0.5) * perimeter / n_locations
        if s < cols:
            edge, pos = "N", int(s)
        elif s < cols + rows:
            edge, pos = "E", int(s - cols)
        elif s < 2 * cols + rows:
            edge, pos = "S", int(cols - 1 - (s - cols - rows))
        else:
            edge, pos = "W", int(rows - 1 - (s - 2 * cols - rows))
        n_in = _edge_len(edge, z.shape)
        in_seg = centered_segment(edge, pos, width, n_in)
        out_edge = _OPPOSITE[edge]
        n_out = _edge_len(out_edge, z.shape)
        out_seg = centered_segment(out_edge, n_out // 2, width, n_out)
        for q in discharges:
            out.append(BoundaryConditions(in_seg, float(q), out_seg, outflux_slope))
    return out


# ---------------------------------------------------------------------------
# config files

def spec_to_dict(spec: TerrainSpec) -> dict:
    return {k: v for k, v in asdict(spec).items() if v is not None}


def load_config(path: str | Path) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return cfg


def terrain_from_config(cfg: dict) -> TerrainSpec:
    return TerrainSpec(**cfg.get("terrain", {}))


def bcs_from_config(cfg: dict, z: ElevationMap) -> list[BoundaryConditions]:
    """Boundary conditions listed explicitly under ``bcs`` or generated from ``bc_grid``/``auto_bc``."""
    if "bcs" in cfg:
        return [BoundaryConditions.from_dict(d) for d in cfg["bcs"]]
    if "bc_grid" in cfg:
        g = cfg["bc_grid"]
        return bc_grid(z, int(g["n_locations"]), g["discharges"], g.get("width_m", 400.0),
                       g.get("outflux_slope", 1e-3))
    a = cfg.get("auto_bc", {})
    return [auto_bc(z, a.get("width_m", 400.0), a.get("discharge", 100.0), a.get("outflux_slope", 1e-3))]
