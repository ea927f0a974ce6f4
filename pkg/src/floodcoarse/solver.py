"""Inertial shallow-water solver on a staggered grid with CFL-adaptive steps.

Depths live at cell centres and unit-width fluxes on cell interfaces. Each
step runs momentum (theta-weighted neighbour averaging with semi-implicit
Manning friction), then continuity, then the boundary sources: a uniform
influx over one edge segment and Manning normal-flow drainage over another.
Every other boundary interface is a closed wall.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .grid import ElevationMap, FlowState

EDGES = ("N", "E", "S", "W")


class NumericalInstabilityError(RuntimeError):
    def __init__(self, step: int, cell: tuple[int, int] | None = None, detail: str = ""):
        self.step = step
        self.cell = cell
        msg = f"non-finite state at step {step}"
        if cell is not None:
            msg += f", cell {cell}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class SolverParams:
    theta: float = 0.7
    alpha: float = 0.7
    manning_n: float = 0.03
    g: float = 9.81
    dry_threshold: float = 1e-3
    max_dt: float = 10.0
    horizon_T: float = 3600.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.manning_n > 0:
            raise ValueError("manning_n must be positive")
        if not self.g > 0:
            raise ValueError("g must be positive")
        if not self.dry_threshold >= 0:
            raise ValueError("dry_threshold must be non-negative")
        if not self.max_dt > 0 or not self.horizon_T > 0:
            raise ValueError("max_dt and horizon_T must be positive")

    def with_(self, **kw) -> "SolverParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class Segment:
    edge: str
    start_cell: int
    width_cells: int

    def cells(self, shape: tuple[int, int]) -> list[tuple[int, int]]:
        rows, cols = shape
        idx = range(self.start_cell, self.start_cell + self.width_cells)
        if self.edge == "N":
            return [(0, j) for j in idx]
        if self.edge == "S":
            return [(rows - 1, j) for j in idx]
        if self.edge == "W":
            return [(i, 0) for i in idx]
        return [(i, cols - 1) for i in idx]

    def edge_length(self, shape: tuple[int, int]) -> int:
        return shape[1] if self.edge in ("N", "S") else shape[0]

    def coarsen(self, k: int) -> "Segment":
        """The coarse cells covering the same stretch of edge at factor ``k``."""
        start = self.start_cell // k
        end = -(-(self.start_cell + self.width_cells) // k)
        return Segment(self.edge, start, end - start)

    def mirrored_lr(self, shape: tuple[int, int]) -> "Segment":
        """The same segment on a left-right mirrored grid."""
        if self.edge in ("N", "S"):
            return Segment(self.edge, shape[1] - self.start_cell - self.width_cells, self.width_cells)
        return Segment("E" if self.edge == "W" else "W", self.start_cell, self.width_cells)


@dataclass(frozen=True)
class BoundaryConditions:
    influx: Segment
    discharge: float
    outflux: Segment
    outflux_slope: float

    def validate(self, shape: tuple[int, int]) -> None:
        for name, seg in (("influx", self.influx), ("outflux", self.outflux)):
            if seg.edge not in EDGES:
                raise ValueError(f"{name} edge must be one of {EDGES}, got {seg.edge!r}")
            if seg.width_cells < 1:
                raise ValueError(f"{name} width must be >= 1 cell")
            if seg.start_cell < 0 or seg.start_cell + seg.width_cells > seg.edge_length(shape):
                raise ValueError(f"{name} segment {seg} exceeds the {shape} grid boundary")
        if set(self.influx.cells(shape)) & set(self.outflux.cells(shape)):
            raise ValueError("influx and outflux segments overlap")
        if not self.discharge >= 0:
            raise ValueError("discharge must be non-negative")
        if not self.outflux_slope > 0:
            raise ValueError("outflux slope must be positive")

    def coarsen(self, k: int) -> "BoundaryConditions":
        """Same physical inflow and outflow on a grid ``k`` times coarser; discharge is kept."""
        if k == 1:
            return self
        return replace(self, influx=self.influx.coarsen(k), outflux=self.outflux.coarsen(k))

    def mirrored_lr(self, shape: tuple[int, int]) -> "BoundaryConditions":
        return replace(self, influx=self.influx.mirrored_lr(shape), outflux=self.outflux.mirrored_lr(shape))

    def to_dict(self) -> dict:
        return {
            "influx": {"edge": self.influx.edge, "start_cell": self.influx.start_cell,
                       "width_cells": self.influx.width_cells},
            "discharge": self.discharge,
            "outflux": {"edge": self.outflux.edge, "start_cell": self.outflux.start_cell,
                        "width_cells": self.outflux.width_cells},
            "outflux_slope": self.outflux_slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryConditions":
        return cls(Segment(**d["influx"]), float(d["discharge"]),
                   Segment(**d["outflux"]), float(d["outflux_slope"]))


@dataclass
class StepLog:
    dx: float
    initial_volume: float = 0.0
    dts: list = field(default_factory=list)
    influx_volume: float = 0.0
    outflux_volume: float = 0.0
    # signed volume of negative depths clipped by the positivity clamp (<= 0)
    clamp_deficit: float = 0.0
    final_volume: float = 0.0
    rows: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.dts)

    def mass_balance_error(self) -> float:
        """Volume residual relative to total influx (absolute if no influx)."""
        expected = self.initial_volume + self.influx_volume - self.outflux_volume - self.clamp_deficit
        resid = abs(self.final_volume - expected)
        scale = max(self.influx_volume, self.initial_volume)
        return resid / scale if scale > 0 else resid

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,t,dt,influx_volume,outflux_volume,clamp_deficit,volume\n")
        for row in self.rows:
            buf.write("%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n" % row)
        buf.write("# mass_balance_relative_error,%.6e\n" % self.mass_balance_error())
        return buf.getvalue()


def cfl_dt(state: FlowState, params: SolverParams, dx: float, remaining: float) -> float:
    h_max = float(state.h.max())
    if h_max <= params.dry_threshold:
        return min(params.max_dt, remaining)
    return min(params.alpha * dx / math.sqrt(params.g * h_max), params.max_dt, remaining)


def interface_depth(z_a: float, z_b: float, h_a: float, h_b: float) -> float:
    return _kernels.interface_depth(float(z_a), float(z_b), float(h_a), float(h_b))


def momentum_step(z, state: FlowState, dt: float, params: SolverParams, dx: float,
                  step_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    z = z.z if isinstance(z, ElevationMap) else np.asarray(z, dtype=np.float64)
    qx, qy, bad = _kernels.momentum(state.h, z, state.qx, state.qy, dt, dx, params.theta,
                                    params.g, params.manning_n, params.dry_threshold)
    if bad >= 0:
        raise NumericalInstabilityError(step_index, divmod(bad, z.shape[1]), "momentum")
    return qx, qy


def continuity_step(state: FlowState, dt: float, dx: float,
                    step_index: int = 0) -> tuple[np.ndarray, float]:
    """Return (clamped depth, clipped negative depth sum <= 0).

    ``state`` must already carry this step's fluxes.
    """
    h1 = _kernels.continuity(state.h, state.qx, state.qy, dt, dx)
    if not np.all(np.isfinite(h1)):
        cell = np.unravel_index(np.argmax(~np.isfinite(h1)), h1.shape)
        raise NumericalInstabilityError(step_index, tuple(int(c) for c in cell), "continuity")
    clipped = _kernels.clamp(h1)
    return h1, clipped


class _BoundaryArrays:
    """Index arrays for the boundary kernel, built once per (grid, bc)."""

    def __init__(self, bc: BoundaryConditions, shape: tuple[int, int]):
        bc.validate(shape)
        cin = np.array(bc.influx.cells(shape), dtype=np.int64).reshape(-1, 2)
        cout = np.array(bc.outflux.cells(shape), dtype=np.int64).reshape(-1, 2)
        self.in_r, self.in_c = cin[:, 0].copy(), cin[:, 1].copy()
        self.out_r, self.out_c = cout[:, 0].copy(), cout[:, 1].copy()
        self.width = len(cin)
        self.bc = bc

    def influx_depth(self, dt: float, dx: float) -> float:
        return self.bc.discharge * dt / (self.width * dx * dx)

    def outflux_coef(self, dt: float, dx: float, n: float) -> float:
        return dt / dx * math.sqrt(self.bc.outflux_slope) / n


def apply_boundary(state: FlowState, bc: BoundaryConditions, dt: float, dx: float,
                   params: SolverParams) -> tuple[FlowState, tuple[float, float]]:
    arr = _BoundaryArrays(bc, state.h.shape)
    h = state.h.copy()
    added, drained = _kernels.boundary(h, arr.in_r, arr.in_c, arr.influx_depth(dt, dx),
                                       arr.out_r, arr.out_c,
                                       arr.outflux_coef(dt, dx, params.manning_n))
    out = FlowState(h, state.qx, state.qy, state.t)
    return out, (added * dx * dx, drained * dx * dx)


class Stepper:
    """Binds terrain, boundary and parameters for repeated full steps."""

    def __init__(self, z, bc: BoundaryConditions, params: SolverParams, dx: float | None = None):
        if isinstance(z, ElevationMap):
            dx = z.cell_size if dx is None else dx
            z = z.z
        if dx is None:
            raise ValueError("dx required for a bare elevation array")
        self.z = np.ascontiguousarray(z, dtype=np.float64)
        self.dx = float(dx)
        self.params = params
        self.bc = bc
        self.arrays = _BoundaryArrays(bc, self.z.shape)

    def cfl(self, h: np.ndarray, remaining: float) -> float:
        p = self.params
        h_max = float(h.max())
        if h_max <= p.dry_threshold:
            return min(p.max_dt, remaining)
        return min(p.alpha * self.dx / math.sqrt(p.g * h_max), p.max_dt, remaining)

    def _args(self, dt):
        p, a = self.params, self.arrays
        return (dt, self.dx, p.theta, p.g, p.manning_n, p.dry_threshold,
                a.in_r, a.in_c, a.influx_depth(dt, self.dx),
                a.out_r, a.out_c, a.outflux_coef(dt, self.dx, p.manning_n))

    def step(self, h, qx, qy, dt, step_index=0):
        """Advance by dt; returns (h, qx, qy, clipped, added, drained) depth sums."""
        h, qx, qy, clipped, added, drained, bad = _kernels.step(self.z, h, qx, qy, *self._args(dt))
        if bad >= 0:
            raise NumericalInstabilityError(step_index, divmod(int(bad), self.z.shape[1]))
        return h, qx, qy, clipped, added, drained

    def step_backward(self, h, qx, qy, dt, lam_h, lam_qx, lam_qy, grad_z):
        return _kernels.step_backward(self.z, h, qx, qy, *self._args(dt), lam_h, lam_qx, lam_qy, grad_z)


def initial_state(shape: tuple[int, int], h0: np.ndarray | None = None) -> FlowState:
    st = FlowState.dry(shape)
    if h0 is not None:
        h0 = np.asarray(h0, dtype=np.float64)
        if h0.shape != shape or np.any(h0 < 0) or not np.all(np.isfinite(h0)):
            raise ValueError("initial depth must be finite, non-negative and match the grid")
        st.h = h0.copy()
    return st


def simulate(z: ElevationMap, bc: BoundaryConditions, params: SolverParams = SolverParams(),
             h0: np.ndarray | None = None, log_rows: bool = True) -> tuple[FlowState, StepLog]:
    """Integrate from rest (or from depth ``h0``) to exactly ``params.horizon_T``."""
    stepper = Stepper(z, bc, params)
    dx = stepper.dx
    state = initial_state(stepper.z.shape, h0)
    h, qx, qy = state.h, state.qx, state.qy
    cell_area = dx * dx
    log = StepLog(dx=dx, initial_volume=float(h.sum()) * cell_area)
    t, T = 0.0, params.horizon_T
    k = 0
    added_tot = drained_tot = clipped_tot = 0.0
    while t < T:
        remaining = T - t
        dt = stepper.cfl(h, remaining)
        h, qx, qy, clipped, added, drained = stepper.step(h, qx, qy, dt, k)
        k += 1
        t = T if dt == remaining else t + dt
        added_tot += added
        drained_tot += drained
        clipped_tot += clipped
        log.dts.append(dt)
        if log_rows:
            log.rows.append((k, t, dt, added_tot * cell_area, drained_tot * cell_area,
                             clipped_tot * cell_area, float(h.sum()) * cell_area))
    log.influx_volume = added_tot * cell_area
    log.outflux_volume = drained_tot * cell_area
    log.clamp_deficit = clipped_tot * cell_area
    log.final_volume = float(h.sum()) * cell_area
    return FlowState(h, qx, qy, t), log
