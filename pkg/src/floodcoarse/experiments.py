"""Desk-scale experiments behind the acceptance suite and scripts/.

Each function builds its scenario from fixed seeds, runs it and returns a
small result record. Nothing here is tuned per call; the parameters are the
ones recorded in the README.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import (CheckpointSchedule, finite_difference_grad, gradcheck_instance, gradient_pass, grad_errors,
                      run_gradcheck)
from .bench import BenchReport, run_bench
from .downsample import Downsampler
from .loss import LossSpec
from .optimize import (History, Sample, TrainConfig, compute_target, make_samples, optimize_single_map,
                       sample_loss, train_multi_map)
from .scenario import KINDS, TerrainSpec, auto_bc, bc_grid, generate
from .solver import BoundaryConditions, Segment, SolverParams, simulate


# ---------------------------------------------------------------------------
# adjoint vs finite differences

GRADCHECK_SIZES = (8, 12, 16, 24, 32)
GRADCHECK_STEPS = (50, 120, 200, 80, 60)


@dataclass
class GradCheckRow:
    seed: int
    size: int
    steps: int
    loss: str
    normwise: float
    elementwise: float
    seconds: float
    oracle_ok: bool = True  # central differences at eps and eps/10 agree


def gradcheck_row(seed: int, size: int, steps: int, kind: str, eps: float = 1e-4,
                  screen: float | None = 1e-6) -> GradCheckRow:
    """Adjoint vs central differences on one random instance.

    With ``screen`` set, differences are also taken at ``eps / 10``. If the
    two disagree by more than ``screen`` (normwise) a switching point of the
    solver lies within ``eps`` of the input and the wide difference is not a
    valid oracle there. The screen never looks at the adjoint.
    """
    t0 = time.perf_counter()
    inst = gradcheck_instance(seed, size, steps)
    loss = LossSpec(kind)
    adj, fd = run_gradcheck(inst, loss, eps)
    ok = True
    if screen is not None:
        fine = finite_difference_grad(inst.z, inst.bc, inst.params, inst.target, loss, eps / 10,
                                      dts=inst.dts, h0=inst.h0)
        ok = grad_errors(fine, fd)[0] <= screen
    norm, elem = grad_errors(adj, fd)
    return GradCheckRow(seed, size, steps, kind, norm, elem, time.perf_counter() - t0, ok)


def gradcheck_suite(n: int = 20, eps: float = 1e-4, screen: float | None = 1e-6) -> list[GradCheckRow]:
    """Random instances cycling through sizes, step counts and both losses.

    Returns every instance tried; seeds whose oracle fails the screen are
    kept in the list (flagged) and the suite runs on until ``n`` instances
    pass the screen.
    """
    rows = []
    seed = 0
    while sum(r.oracle_ok for r in rows) < n:
        size = GRADCHECK_SIZES[seed % len(GRADCHECK_SIZES)]
        steps = GRADCHECK_STEPS[(seed // len(GRADCHECK_SIZES)) % len(GRADCHECK_STEPS)]
        kind = "huber" if seed % 2 == 0 else "mse"
        rows.append(gradcheck_row(seed, size, steps, kind, eps, screen))
        seed += 1
    return rows


def checkpoint_spread(steps: int = 500, size: int = 12, seed: int = 0) -> dict[int, float]:
    """Relative max deviation of gradients at several intervals from interval 1."""
    inst = gradcheck_instance(seed, size, steps)
    grads = {}
    for k in (1, 7, math.ceil(math.sqrt(steps))):
        sched = CheckpointSchedule(k, list(inst.dts))
        grads[k] = gradient_pass(inst.z, inst.bc, inst.params, inst.target, LossSpec(), sched, h0=inst.h0).grad
    ref = grads[1]
    scale = np.abs(ref).max()
    return {k: float(np.abs(g - ref).max() / scale) for k, g in grads.items()}


# ---------------------------------------------------------------------------
# mass balance sweep

def mass_balance_sweep(n: int = 64) -> list[tuple[str, float, float, float]]:
    """(kind, discharge, mass balance error, deficit / volume) over every terrain kind."""
    out = []
    for kind in KINDS:
        z = generate(TerrainSpec(kind, n, n, 16.0, noise=0.3, seed=1))
        for q in (50.0, 400.0):
            _, log = simulate(z, auto_bc(z, discharge=q), SolverParams(horizon_T=3600.0), log_rows=False)
            vol = max(log.final_volume, log.influx_volume)
            out.append((kind, q, log.mass_balance_error(), abs(log.clamp_deficit) / vol))
    return out


# ---------------------------------------------------------------------------
# gradient localisation at a notch

@dataclass
class Localization:
    grad: np.ndarray
    depth: np.ndarray
    notch: tuple[int, int]
    argmax: tuple[int, int]
    ratio: float  # |grad| at the notch over the median |grad| of wet cells
    steps: int
    seconds: float

    @property
    def in_neighborhood(self) -> bool:
        return abs(self.argmax[0] - self.notch[0]) <= 1 and abs(self.argmax[1] - self.notch[1]) <= 1


def localization(n: int = 32, dx: float = 64.0, hours: float = 6.0, discharge: float = 100.0,
                 noise: float = 0.2, seed: int = 3, wet: float = 0.01) -> Localization:
    """Gradient of a notched embankment against the intact embankment's flood.

    Both maps live on the same grid. The notched map lets water through a
    one-cell gap; the target is the depth behind the intact wall, so the
    loss is driven by what leaks through the notch. Ground falls gently
    northward across the wall so the notch is the controlling sill.
    """
    kw = dict(rows=n, cols=n, cell_size=dx, slope=0.0, slope_y=0.001, ridge_row=n // 2, ridge_width=1,
              ridge_height=2.0, notch_width=1, noise=noise, seed=seed)
    ridge = generate(TerrainSpec("EmbankmentRidge", **kw))
    spec = TerrainSpec("NotchedEmbankment", **kw)
    notched = generate(spec)
    bc = BoundaryConditions(Segment("S", n // 2 - 2, 4), discharge, Segment("N", n // 2 - 2, 4), 1e-3)
    params = SolverParams(max_dt=2.0, horizon_T=hours * 3600.0)
    t0 = time.perf_counter()
    target, _ = simulate(ridge, bc, params, log_rows=False)
    res = gradient_pass(notched, bc, params, target.h, LossSpec("huber"))
    seconds = time.perf_counter() - t0
    g = np.abs(res.grad)
    am = np.unravel_index(int(np.argmax(g)), g.shape)
    notch = (spec.ridge, spec.notch)
    ratio = float(g[notch] / np.median(g[res.h > wet]))
    return Localization(res.grad, res.h, notch, (int(am[0]), int(am[1])), ratio, res.steps, seconds)


# ---------------------------------------------------------------------------
# single map, many boundary conditions

SINGLE_MAP_TERRAIN = {
    "NotchedEmbankment": dict(ridge_row=72),
    "CanalWithLevees": dict(center_row=72),
}


@dataclass
class SingleMapResult:
    kind: str
    baseline: np.ndarray  # AvgPool loss per held-out bc
    trained: np.ndarray
    history: History
    model: Downsampler
    seconds: float

    @property
    def ratio(self) -> float:
        return float(self.trained.sum() / self.baseline.sum())

    @property
    def per_bc(self) -> np.ndarray:
        return self.trained / self.baseline


def single_map_split(z, discharges=(400.0, 800.0, 1600.0), n_locations: int = 4):
    """Train on the outer discharges at every influx location, hold out the middle one."""
    bcs = bc_grid(z, n_locations, discharges)
    m = len(discharges)
    train = [b for i, b in enumerate(bcs) if i % m != m // 2]
    hold = [b for i, b in enumerate(bcs) if i % m == m // 2]
    return train, hold


def single_map(kind: str = "NotchedEmbankment", epochs: int = 150, lr: float = 0.02, batch_size: int = 8,
               noise: float = 0.3, seed: int = 1, cache_dir=None) -> SingleMapResult:
    """DirectMap on one 128x128 map: 8 training and 4 held-out boundary conditions."""
    z = generate(TerrainSpec(kind, noise=noise, seed=seed, **SINGLE_MAP_TERRAIN.get(kind, {})))
    train, hold = single_map_split(z)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr)
    t0 = time.perf_counter()
    model, hist = optimize_single_map(z, train, hold, cfg, cache_dir=cache_dir)
    seconds = time.perf_counter() - t0
    samples = make_samples(z, hold, cfg.solver, 16, cache_dir)
    base = Downsampler("AvgPool", 16)
    b = np.array([sample_loss(base, s, cfg) for s in samples])
    t = np.array([sample_loss(model, s, cfg) for s in samples])
    return SingleMapResult(kind, b, t, hist, model, seconds)


# ---------------------------------------------------------------------------
# many maps

MULTI_KINDS = ("NotchedEmbankment", "CanalWithLevees", "EmbankmentRidge")


def multi_map_dataset(n_maps: int = 12, discharge: float = 800.0, params: SolverParams = SolverParams(),
                      cache_dir=None) -> list[Sample]:
    """Barrier terrains at random rows, each flooded from a random stretch of the N or S edge."""
    rng = np.random.default_rng(0)
    out = []
    for m in range(n_maps):
        row = int(rng.choice([40, 56, 72, 88]))
        spec = TerrainSpec(MULTI_KINDS[m % 3], noise=0.3, seed=m, ridge_row=row, center_row=row,
                           notch_col=int(rng.integers(16, 100)))
        z = generate(spec)
        edge, other = ("N", "S") if m % 2 == 0 else ("S", "N")
        bc = BoundaryConditions(Segment(edge, int(rng.integers(20, 80)), 25), discharge,
                                Segment(other, 52, 25), 1e-3)
        out.append(Sample(z, bc, compute_target(z, bc, params, 16, cache_dir)))
    return out


@dataclass
class MultiMapResult:
    baseline: np.ndarray  # AvgPool loss per held-out map
    trained: np.ndarray
    history: History
    epoch0_holdout: float
    baseline_holdout: float
    model: Downsampler
    seconds: float

    @property
    def wins(self) -> int:
        return int((self.trained < self.baseline).sum())


def multi_map(epochs: int = 60, lr: float = 1e-3, batch_size: int = 4, n_train: int = 8,
              n_holdout: int = 4, cache_dir=None) -> MultiMapResult:
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr)
    data = multi_map_dataset(n_train + n_holdout, params=cfg.solver, cache_dir=cache_dir)
    train, hold = data[:n_train], data[n_train:]
    t0 = time.perf_counter()
    model, hist = train_multi_map(train, hold, cfg)
    seconds = time.perf_counter() - t0
    base = Downsampler("AvgPool", 16)
    b = np.array([sample_loss(base, s, cfg) for s in hold])
    t = np.array([sample_loss(model, s, cfg) for s in hold])
    return MultiMapResult(b, t, hist, float(hist.holdout[0]), float(b.mean()), model, seconds)


# ---------------------------------------------------------------------------
# cost and baselines

def bench_scenario(n: int = 256, discharge: float = 5.0, hours: float = 1 / 6):
    """A notched embankment at 1 m spacing; at factor 16 the coarse run is 16x16."""
    z = generate(TerrainSpec("NotchedEmbankment", n, n, 1.0, slope=-0.001, ridge_row=n // 2 + 8))
    bc = auto_bc(z, width_m=n / 4, discharge=discharge)
    return z, bc, SolverParams(horizon_T=hours * 3600.0)


def bench(factor: int = 16, **kw) -> BenchReport:
    z, bc, params = bench_scenario(**kw)
    return run_bench(z, bc, params, factor)


@dataclass
class ParityResult:
    losses: dict = field(default_factory=dict)  # kind -> list of Huber losses
    valid: dict = field(default_factory=dict)  # kind -> all coarse maps finite with the right shape

    def median(self, kind: str) -> float:
        return float(np.median(self.losses[kind]))


def baseline_parity(discharge: float = 100.0, seeds=(0, 1), cache_dir=None) -> ParityResult:
    """AvgPool and the two bilateral baselines over every terrain kind."""
    cfg = TrainConfig()
    models = {k: Downsampler(k, 16) for k in ("AvgPool", "BilateralAvg", "BilateralMax")}
    res = ParityResult({k: [] for k in models}, {k: True for k in models})
    for kind in KINDS:
        for seed in seeds:
            z = generate(TerrainSpec(kind, noise=0.3, seed=seed))
            bc = auto_bc(z, discharge=discharge)
            s = Sample(z, bc, compute_target(z, bc, cfg.solver, 16, cache_dir))
            for name, m in models.items():
                zc = m(z)
                res.valid[name] &= zc.shape == (z.rows // 16, z.cols // 16) and bool(np.all(np.isfinite(zc.z)))
                res.losses[name].append(sample_loss(m, s, cfg))
    return res
