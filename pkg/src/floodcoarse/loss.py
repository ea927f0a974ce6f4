"""Per-pixel water-depth losses and fine-to-coarse water coarsening.

All losses are summed over pixels. Huber uses a unit threshold; the
Inundation count is evaluation-only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import avg_pool

HUBER = "huber"
MSE = "mse"
INUNDATION = "inundation"


class NonDifferentiableLossError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str = HUBER
    c: float = 0.5  # inundation threshold in meters

    def __post_init__(self):
        if self.kind not in (HUBER, MSE, INUNDATION):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError("inundation threshold c must be positive")

    @property
    def differentiable(self) -> bool:
        return self.kind != INUNDATION

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """``huber``, ``mse`` or ``inundation[:c]``."""
        kind, _, arg = text.lower().partition(":")
        return cls(kind, float(arg)) if arg else cls(kind)


def coarsen_water(h_fine: np.ndarray, k: int) -> np.ndarray:
    return avg_pool(h_fine, k)


def per_pixel_loss(h_hat: np.ndarray, h_target: np.ndarray, spec: LossSpec) -> np.ndarray:
    h_hat = np.asarray(h_hat, dtype=np.float64)
    h_target = np.asarray(h_target, dtype=np.float64)
    if h_hat.shape != h_target.shape:
        raise ValueError(f"shape mismatch {h_hat.shape} vs {h_target.shape}")
    d = h_hat - h_target
    ad = np.abs(d)
    if spec.kind == HUBER:
        return np.where(ad <= 1.0, 0.5 * d * d, ad - 0.5)
    if spec.kind == MSE:
        return d * d
    return (ad >= spec.c).astype(np.float64)


def eval_loss(h_hat, h_target, spec: LossSpec = LossSpec()) -> tuple[float, np.ndarray]:
    """Return (sum over pixels, per-pixel map)."""
    pix = per_pixel_loss(h_hat, h_target, spec)
    return float(pix.sum()), pix


def loss_grad(h_hat, h_target, spec: LossSpec = LossSpec()) -> np.ndarray:
    """d(sum loss)/d(h_hat). At |d| == 1 the Huber slope is 1 in magnitude either way."""
    if not spec.differentiable:
        raise NonDifferentiableLossError("the inundation count has no useful gradient; use it for evaluation")
    d = np.asarray(h_hat, dtype=np.float64) - np.asarray(h_target, dtype=np.float64)
    if spec.kind == HUBER:
        return np.clip(d, -1.0, 1.0)
    return 2.0 * d


def signed_difference(h_coarse: np.ndarray, h_reference: np.ndarray) -> np.ndarray:
    """Positive where the coarse solution is more inundated than the reference."""
    return np.asarray(h_coarse, dtype=np.float64) - np.asarray(h_reference, dtype=np.float64)
