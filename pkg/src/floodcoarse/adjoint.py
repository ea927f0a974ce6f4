"""Reverse-mode gradient of a depth loss with respect to the terrain.

The forward pass records every time step and keeps a state snapshot every
``interval_steps`` steps. The backward pass walks the segments in reverse:
each segment is replayed from its snapshot with the recorded time steps,
then reversed step by step with the hand-written step adjoint. Time steps
are constants of differentiation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ElevationMap
from .loss import LossSpec, NonDifferentiableLossError, eval_loss, loss_grad
from .solver import BoundaryConditions, Segment, SolverParams, Stepper, initial_state


class CheckpointConsistencyError(RuntimeError):
    pass


@dataclass
class CheckpointSchedule:
    interval_steps: int | None = None
    dts: list = field(default_factory=list)

    def __post_init__(self):
        if self.interval_steps is not None and self.interval_steps < 1:
            raise ValueError("interval_steps must be >= 1")

    def resolved_interval(self) -> int:
        if self.interval_steps is not None:
            return self.interval_steps
        return max(1, math.ceil(math.sqrt(len(self.dts))))


@dataclass
class GradResult:
    loss: float
    grad: np.ndarray
    h: np.ndarray
    steps: int
    interval_steps: int
    peak_states: int  # most states held at once (snapshots + one replayed segment)


def record_dts(stepper: Stepper, h0: np.ndarray | None, horizon: float) -> list[float]:
    st = initial_state(stepper.z.shape, h0)
    h, qx, qy = st.h, st.qx, st.qy
    dts = []
    t = 0.0
    while t < horizon:
        remaining = horizon - t
        dt = stepper.cfl(h, remaining)
        h, qx, qy, *_ = stepper.step(h, qx, qy, dt, len(dts))
        dts.append(dt)
        t = horizon if dt == remaining else t + dt
    return dts


def forward_snapshots(stepper: Stepper, h0, dts: list[float], interval: int):
    """Replay the recorded steps, keeping the state entering every ``interval``-th step."""
    st = initial_state(stepper.z.shape, h0)
    h, qx, qy = st.h, st.qx, st.qy
    snaps = {}
    for k, dt in enumerate(dts):
        if k % interval == 0:
            snaps[k] = (h, qx, qy)
        h, qx, qy, *_ = stepper.step(h, qx, qy, dt, k)
    return (h, qx, qy), snaps


def checkpointed_backward(stepper: Stepper, snaps: dict, dts: list[float], interval: int,
                          lam_h: np.ndarray, lam_qx: np.ndarray | None = None,
                          lam_qy: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Accumulate d(loss)/dz given the adjoint of the final state.

    Returns (grad_z, peak number of states held).
    """
    n = len(dts)
    rows, cols = stepper.z.shape
    lam_h = np.array(lam_h, dtype=np.float64)
    lam_qx = np.zeros((rows, cols - 1)) if lam_qx is None else np.array(lam_qx, dtype=np.float64)
    lam_qy = np.zeros((rows - 1, cols)) if lam_qy is None else np.array(lam_qy, dtype=np.float64)
    grad = np.zeros((rows, cols))
    peak = len(snaps)
    starts = sorted(snaps)
    if n and (starts[0] != 0 or any(s % interval for s in starts)):
        raise CheckpointConsistencyError("snapshot positions do not match the interval")
    for seg_start in reversed(starts):
        seg_end = min(seg_start + interval, n)
        states = [snaps[seg_start]]
        h, qx, qy = states[0]
        for k in range(seg_start, seg_end - 1):
            h, qx, qy, *_ = stepper.step(h, qx, qy, dts[k], k)
            states.append((h, qx, qy))
        if seg_end < n:
            hn, qxn, qyn, *_ = stepper.step(h, qx, qy, dts[seg_end - 1], seg_end - 1)
            ref = snaps[seg_end]
            if not (np.array_equal(hn, ref[0]) and np.array_equal(qxn, ref[1])
                    and np.array_equal(qyn, ref[2])):
                raise CheckpointConsistencyError(
                    f"replay of steps [{seg_start}, {seg_end}) does not reproduce the stored snapshot")
        peak = max(peak, len(snaps) + len(states) - 1)
        for k in range(seg_end - 1, seg_start - 1, -1):
            h, qx, qy = states[k - seg_start]
            lam_h, lam_qx, lam_qy = stepper.step_backward(h, qx, qy, dts[k], lam_h, lam_qx, lam_qy, grad)
    return grad, peak


def gradient_pass(z: ElevationMap, bc: BoundaryConditions, params: SolverParams,
                  target_h: np.ndarray, loss: LossSpec = LossSpec(),
                  schedule: CheckpointSchedule | None = None,
                  h0: np.ndarray | None = None) -> GradResult:
    if not loss.differentiable:
        raise NonDifferentiableLossError(f"{loss.kind} loss cannot drive a gradient")
    target_h = np.asarray(target_h, dtype=np.float64)
    if target_h.shape != z.shape:
        raise ValueError(f"target shape {target_h.shape} != terrain shape {z.shape}")
    schedule = schedule or CheckpointSchedule()
    stepper = Stepper(z, bc, params)
    if not schedule.dts:
        schedule.dts = record_dts(stepper, h0, params.horizon_T)
    dts = schedule.dts
    interval = schedule.resolved_interval()
    (h, _, _), snaps = forward_snapshots(stepper, h0, dts, interval)
    value, _ = eval_loss(h, target_h, loss)
    grad, peak = checkpointed_backward(stepper, snaps, dts, interval, loss_grad(h, target_h, loss))
    return GradResult(value, grad, h, len(dts), interval, peak)


def loss_and_grad(z: ElevationMap, bc: BoundaryConditions, params: SolverParams,
                  target_h: np.ndarray, loss: LossSpec = LossSpec(),
                  schedule: CheckpointSchedule | None = None,
                  h0: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Loss of the simulated depth against ``target_h`` and its gradient w.r.t. ``z``."""
    res = gradient_pass(z, bc, params, target_h, loss, schedule, h0)
    return res.loss, res.grad


def finite_difference_grad(z: ElevationMap, bc: BoundaryConditions, params: SolverParams,
                           target_h: np.ndarray, loss: LossSpec = LossSpec(), eps: float = 1e-4,
                           dts: list[float] | None = None, h0: np.ndarray | None = None,
                           cells=None) -> np.ndarray:
    """Central differences of the same frozen-dt map, one cell at a time.

    Independent of the adjoint: it only calls the forward step.
    """
    stepper = Stepper(z, bc, params)
    if dts is None:
        dts = record_dts(stepper, h0, params.horizon_T)
    base = np.array(z.z)

    def run(zz):
        s = Stepper(zz, bc, params, dx=z.cell_size)
        st = initial_state(zz.shape, h0)
        h, qx, qy = st.h, st.qx, st.qy
        for k, dt in enumerate(dts):
            h, qx, qy, *_ = s.step(h, qx, qy, dt, k)
        return eval_loss(h, target_h, loss)[0]

    out = np.full(base.shape, np.nan)
    it = np.ndindex(base.shape) if cells is None else cells
    for idx in it:
        zp = base.copy()
        zp[idx] += eps
        zm = base.copy()
        zm[idx] -= eps
        out[idx] = (run(zp) - run(zm)) / (2 * eps)
    return out


# ---------------------------------------------------------------------------
# gradient checks

@dataclass
class GradCheckInstance:
    z: ElevationMap
    bc: BoundaryConditions
    params: SolverParams
    h0: np.ndarray
    dts: list
    target: np.ndarray


def gradcheck_instance(seed: int, size: int, steps: int) -> GradCheckInstance:
    """A random wet instance away from the solver's switching points.

    A tilted plane at 256 m spacing carries a thin uniform sheet toward the
    south outflux. Depth gradients stay monotone, so the free-surface and
    wet/dry switches do not flip under a 1e-4 m perturbation and central
    differences are a clean oracle. Targets are the end state plus noise.
    """
    if size < 4 or steps < 1:
        raise ValueError("gradcheck needs size >= 4 and steps >= 1")
    rng = np.random.default_rng(seed)
    dx = 256.0
    sx, sy = rng.uniform(0.002, 0.004, 2)
    i = np.arange(size)[:, None]
    j = np.arange(size)[None, :]
    z = -(sx * j + sy * i) * dx + rng.uniform(-1.0, 1.0, (size, size)) * 0.2 * min(sx, sy) * dx
    h0 = np.full((size, size), rng.uniform(0.4, 0.8))
    w = max(1, size // 4)
    bc = BoundaryConditions(Segment("N", 1, w), rng.uniform(2.0, 20.0), Segment("S", size - 1 - w, w), 1e-3)
    params = SolverParams(horizon_T=1e9)
    em = ElevationMap(z, dx)
    stepper = Stepper(em, bc, params)
    h, qx, qy = h0.copy(), np.zeros((size, size - 1)), np.zeros((size - 1, size))
    dts = []
    for k in range(steps):
        dt = stepper.cfl(h, params.horizon_T)
        h, qx, qy, *_ = stepper.step(h, qx, qy, dt, k)
        dts.append(dt)
    target = h + rng.normal(0.0, 0.2, h.shape)
    return GradCheckInstance(em, bc, params, h0, dts, target)


def grad_errors(adj: np.ndarray, fd: np.ndarray, atol: float = 1e-8) -> tuple[float, float]:
    """(normwise relative error, elementwise error |a - f| / (|f| + atol))."""
    diff = np.abs(adj - fd)
    scale = np.abs(fd).max()
    norm = diff.max() / scale if scale > 0 else diff.max()
    return float(norm), float((diff / (np.abs(fd) + atol)).max())


def run_gradcheck(inst: GradCheckInstance, loss: LossSpec = LossSpec(), eps: float = 1e-4,
                  interval: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint and finite-difference gradients for one instance."""
    sched = CheckpointSchedule(interval, list(inst.dts))
    res = gradient_pass(inst.z, inst.bc, inst.params, inst.target, loss, sched, h0=inst.h0)
    fd = finite_difference_grad(inst.z, inst.bc, inst.params, inst.target, loss, eps,
                                dts=inst.dts, h0=inst.h0)
    return res.grad, fd
