"""Training loops for coarse terrain downsamplers.

Both settings share one loop over samples ``(z_fine, bc, target)``: a single
fine map with many boundary conditions, or many maps. A batch gradient is
the mean of per-sample gradients taken in a fixed order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import CheckpointSchedule, gradient_pass
from .downsample import DIRECT_MAP, SMALL_CNN, Downsampler
from .grid import ElevationMap, read_raw, write_raw
from .loss import LossSpec, coarsen_water, eval_loss
from .solver import BoundaryConditions, NumericalInstabilityError, SolverParams, simulate

log = logging.getLogger(__name__)

ABORT = "abort"
HALVE_LR = "halve-lr-and-restart-epoch"


class DivergenceError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.t)


def adam_step(adam: AdamState, params: dict, grads: dict) -> dict:
    """Bias-corrected Adam update; moments in ``adam`` are updated in place."""
    adam.t += 1
    bc1 = 1.0 - adam.beta1 ** adam.t
    bc2 = 1.0 - adam.beta2 ** adam.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = adam.m.setdefault(k, np.zeros_like(p))
        v = adam.v.setdefault(k, np.zeros_like(p))
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        out[k] = p - adam.lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)
    return out


@dataclass
class SgdMomentumState:
    lr: float = 1e-2
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)

    def copy(self) -> "SgdMomentumState":
        return SgdMomentumState(self.lr, self.momentum, {k: a.copy() for k, a in self.velocity.items()})


def sgd_step(state: SgdMomentumState, params: dict, grads: dict) -> dict:
    out = {}
    for k, p in params.items():
        v = state.velocity.setdefault(k, np.zeros_like(p))
        v *= state.momentum
        v += grads[k]
        out[k] = p - state.lr * v
    return out


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    loss: LossSpec = field(default_factory=LossSpec)
    solver: SolverParams = field(default_factory=SolverParams)
    divergence_policy: str = HALVE_LR
    max_restarts: int = 8
    optimizer: str = "adam"  # or "sgd-momentum"
    momentum: float = 0.9
    checkpoint_interval: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.divergence_policy not in (ABORT, HALVE_LR):
            raise ValueError(f"unknown divergence policy {self.divergence_policy!r}")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        if self.optimizer == "adam":
            return AdamState(lr=self.lr)
        return SgdMomentumState(lr=self.lr, momentum=self.momentum)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossSpec.parse(d["loss"]) if isinstance(d["loss"], str) else LossSpec(**d["loss"])
        if "solver" in d:
            d["solver"] = SolverParams(**d["solver"])
        return cls(**d)


@dataclass
class Sample:
    """A fine map, its boundary condition in fine cells, and the coarsened fine depth."""
    z_fine: ElevationMap
    bc: BoundaryConditions
    target: np.ndarray


@dataclass
class History:
    rows: list = field(default_factory=list)  # (epoch, train_loss, holdout_loss, lr, divergence_events)

    def append(self, *row):
        self.rows.append(tuple(row))

    @property
    def train(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def holdout(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    @property
    def divergence_events(self) -> int:
        return self.rows[-1][4] if self.rows else 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "holdout_loss", "lr", "divergence_events"])
        for e, tr, ho, lr, dv in self.rows:
            w.writerow([e, repr(float(tr)), repr(float(ho)), repr(float(lr)), dv])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# targets

def _target_key(z: ElevationMap, bc: BoundaryConditions, params: SolverParams, k: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(z.z).tobytes())
    h.update(repr((z.cell_size, bc.to_dict(), params, k)).encode())
    return h.hexdigest()[:24]


def compute_target(z_fine: ElevationMap, bc: BoundaryConditions, params: SolverParams, k: int,
                   cache_dir: str | Path | None = None) -> np.ndarray:
    """Coarsened fine-grid depth at the horizon; cached on disk when ``cache_dir`` is given."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"target_{_target_key(z_fine, bc, params, k)}.bin"
        if path.exists():
            return np.array(read_raw(path).z)
    state, _ = simulate(z_fine, bc, params, log_rows=False)
    target = coarsen_water(state.h, k)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_raw(target, z_fine.cell_size * k, path)
    return target


def make_samples(z_fine: ElevationMap, bcs, params: SolverParams, k: int, cache_dir=None) -> list[Sample]:
    return [Sample(z_fine, bc, compute_target(z_fine, bc, params, k, cache_dir)) for bc in bcs]


# ---------------------------------------------------------------------------
# evaluation and training

def sample_loss(model: Downsampler, s: Sample, config: TrainConfig, loss: LossSpec | None = None) -> float:
    zc = model(s.z_fine)
    state, _ = simulate(zc, s.bc.coarsen(model.factor), config.solver, log_rows=False)
    return eval_loss(state.h, s.target, loss or config.loss)[0]


def mean_loss(model: Downsampler, samples: list[Sample], config: TrainConfig) -> float:
    if not samples:
        return float("nan")
    return float(np.mean([sample_loss(model, s, config) for s in samples]))


def _finite(params: dict) -> bool:
    return all(np.all(np.isfinite(v)) for v in params.values())


def _batch_grad(model: Downsampler, batch: list[Sample], config: TrainConfig):
    total = {k: np.zeros_like(v) for k, v in model.params.items()}
    losses = []
    for s in batch:
        zc = model(s.z_fine)
        sched = CheckpointSchedule(config.checkpoint_interval)
        res = gradient_pass(zc, s.bc.coarsen(model.factor), config.solver, s.target, config.loss, sched)
        if not (np.isfinite(res.loss) and np.all(np.isfinite(res.grad))):
            raise NumericalInstabilityError(res.steps, None, "non-finite loss or gradient")
        for k, g in model.backward(s.z_fine, res.grad).items():
            total[k] += g
        losses.append(res.loss)
    n = len(batch)
    return {k: v / n for k, v in total.items()}, losses


def train(model: Downsampler, train_set: list[Sample], holdout: list[Sample],
          config: TrainConfig) -> tuple[Downsampler, History]:
    """Epoch/batch loop with a divergence guard.

    Row 0 of the history evaluates the untouched model. On divergence the
    epoch restarts from its opening parameters and optimizer state with half
    the learning rate (or raises, under the abort policy).
    """
    if not model.trainable:
        raise ValueError(f"{model.kind} has nothing to train")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = config.make_optimizer()
    history = History()
    history.append(0, mean_loss(model, train_set, config), mean_loss(model, holdout, config), opt.lr, 0)
    events = 0
    epoch = 1
    while epoch <= config.epochs:
        order = rng.permutation(len(train_set))
        snapshot = ({k: v.copy() for k, v in model.params.items()}, opt.copy())
        epoch_losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[start:start + config.batch_size]]
                grads, losses = _batch_grad(model, batch, config)
                epoch_losses.extend(losses)
                step = adam_step if isinstance(opt, AdamState) else sgd_step
                new_params = step(opt, model.params, grads)
                if not _finite(new_params):
                    raise NumericalInstabilityError(epoch, None, "non-finite parameters")
                model.params = new_params
            holdout_loss = mean_loss(model, holdout, config)
            if holdout and not np.isfinite(holdout_loss):
                raise NumericalInstabilityError(epoch, None, "non-finite held-out loss")
        except (NumericalInstabilityError, FloatingPointError) as exc:
            events += 1
            if config.divergence_policy == ABORT or events > config.max_restarts:
                raise DivergenceError(f"training diverged in epoch {epoch}: {exc}") from exc
            params, opt = snapshot
            model.params = params
            opt.lr *= 0.5
            log.warning("epoch %d diverged (%s); restarting with lr=%g", epoch, exc, opt.lr)
            continue
        history.append(epoch, float(np.mean(epoch_losses)), holdout_loss, opt.lr, events)
        log.info("epoch %d train %.6g holdout %.6g", epoch, history.rows[-1][1], holdout_loss)
        epoch += 1
    return model, history


def optimize_single_map(z_fine: ElevationMap, train_bcs, holdout_bcs, config: TrainConfig,
                        kind: str = DIRECT_MAP, factor: int = 16, cache_dir=None,
                        model: Downsampler | None = None) -> tuple[Downsampler, History]:
    """One fine map, many boundary conditions."""
    train_set = make_samples(z_fine, train_bcs, config.solver, factor, cache_dir)
    holdout = make_samples(z_fine, holdout_bcs, config.solver, factor, cache_dir)
    if model is None:
        if kind == DIRECT_MAP:
            coarse = (z_fine.rows // factor, z_fine.cols // factor)
            model = Downsampler.direct_map(coarse, factor)
        elif kind == SMALL_CNN:
            model = Downsampler.small_cnn(config.seed)
        else:
            raise ValueError(f"{kind} is not trainable")
    return train(model, train_set, holdout, config)


def train_multi_map(dataset: list[Sample], holdout: list[Sample], config: TrainConfig,
                    model: Downsampler | None = None) -> tuple[Downsampler, History]:
    """Many fine maps, each with its own boundary condition, one shared SmallCnn."""
    shapes = {s.z_fine.shape for s in dataset + holdout}
    for shape in shapes:
        if shape[0] % 16 or shape[1] % 16:
            raise ValueError(f"map dims {shape} are not divisible by 16")
    model = model or Downsampler.small_cnn(config.seed)
    return train(model, dataset, holdout, config)
