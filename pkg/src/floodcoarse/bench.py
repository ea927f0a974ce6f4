"""Fine vs coarse cost accounting.

Work per step is counted as the number of cells plus interfaces each step
touches. With CFL-limited steps the step count scales with 1/dx, so the
total work ratio at factor ``x`` in ``d`` dimensions is about ``x**(d + 1)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

from .downsample import Downsampler
from .grid import ElevationMap
from .solver import BoundaryConditions, SolverParams, simulate


def step_work(shape: tuple[int, int]) -> int:
    """Cells plus x- and y-interfaces updated by one step."""
    r, c = shape
    return r * c + r * (c - 1) + (r - 1) * c


def theoretical_speedup(factor: int, dims: int = 2) -> int:
    return factor ** (dims + 1)


@dataclass
class BenchReport:
    factor: int
    fine_shape: tuple
    coarse_shape: tuple
    fine_steps: int
    coarse_steps: int
    fine_h_max: float
    coarse_h_max: float
    fine_seconds: float
    coarse_seconds: float

    @property
    def work_ratio(self) -> float:
        return step_work(self.fine_shape) / step_work(self.coarse_shape)

    @property
    def step_ratio(self) -> float:
        return self.fine_steps / self.coarse_steps

    @property
    def theoretical(self) -> int:
        return theoretical_speedup(self.factor)

    @property
    def predicted(self) -> float:
        return self.work_ratio * self.step_ratio

    @property
    def wall_ratio(self) -> float:
        return self.fine_seconds / self.coarse_seconds if self.coarse_seconds > 0 else float("inf")

    def deterministic_rows(self) -> list[tuple[str, str]]:
        """Everything except wall-clock, which goes to the manifest."""
        return [
            ("factor", str(self.factor)),
            ("fine_shape", "x".join(map(str, self.fine_shape))),
            ("coarse_shape", "x".join(map(str, self.coarse_shape))),
            ("fine_steps", str(self.fine_steps)),
            ("coarse_steps", str(self.coarse_steps)),
            ("fine_h_max", repr(self.fine_h_max)),
            ("coarse_h_max", repr(self.coarse_h_max)),
            ("work_ratio_per_step", repr(self.work_ratio)),
            ("step_count_ratio", repr(self.step_ratio)),
            ("predicted_speedup", repr(self.predicted)),
            ("theoretical_speedup", str(self.theoretical)),
        ]


def run_bench(z_fine: ElevationMap, bc: BoundaryConditions, params: SolverParams,
              factor: int = 16, downsampler: Downsampler | None = None) -> BenchReport:
    """Time the fine run and the coarse run of the same scenario.

    Each run is done twice and the second is timed, so JIT compilation is
    not counted.
    """
    d = downsampler or Downsampler("AvgPool", factor)
    z_coarse = d(z_fine)
    bc_coarse = bc.coarsen(factor)

    def timed(z, b):
        simulate(z, b, params, log_rows=False)
        t0 = time.perf_counter()
        state, log = simulate(z, b, params, log_rows=False)
        return state, log, time.perf_counter() - t0

    fs, fl, ft = timed(z_fine, bc)
    cs, cl, ct = timed(z_coarse, bc_coarse)
    return BenchReport(factor, z_fine.shape, z_coarse.shape, fl.steps, cl.steps,
                       float(fs.h.max()), float(cs.h.max()), ft, ct)
