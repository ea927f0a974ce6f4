"""Coarse terrain producers: fixed pooling baselines and trainable downsamplers.

Trainable kinds output ``avg_pool(z) + correction`` where the correction is
zero at initialisation, so a fresh model reproduces average pooling exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import ElevationMap, avg_pool, max_pool, read_raw, write_raw

AVG_POOL = "AvgPool"
BILATERAL_AVG = "BilateralAvg"
BILATERAL_MAX = "BilateralMax"
DIRECT_MAP = "DirectMap"
SMALL_CNN = "SmallCnn"
KINDS = (AVG_POOL, BILATERAL_AVG, BILATERAL_MAX, DIRECT_MAP, SMALL_CNN)
TRAINABLE = (DIRECT_MAP, SMALL_CNN)


class UnsupportedFactorError(ValueError):
    pass


def bilateral_filter(z: np.ndarray, sigma_spatial: float = 2.0, sigma_range: float = 0.5) -> np.ndarray:
    """Edge-preserving smoothing; the window is truncated at the raster edge and renormalised."""
    if not (sigma_spatial > 0 and sigma_range > 0):
        raise ValueError("bilateral sigmas must be positive")
    z = np.asarray(z, dtype=np.float64)
    r = int(math.ceil(3 * sigma_spatial))
    rows, cols = z.shape
    zp = np.pad(z, r, mode="constant", constant_values=np.nan)
    num = np.zeros_like(z)
    den = np.zeros_like(z)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            nb = zp[r + di:r + di + rows, r + dj:r + dj + cols]
            w = math.exp(-(di * di + dj * dj) / (2 * sigma_spatial ** 2)) * np.exp(
                -((nb - z) ** 2) / (2 * sigma_range ** 2))
            valid = ~np.isnan(nb)
            num += np.where(valid, w * np.nan_to_num(nb), 0.0)
            den += np.where(valid, w, 0.0)
    return num / den


# ---------------------------------------------------------------------------
# small strided CNN

N_LAYERS = 4
CHANNELS = 8
KSIZE = 5
STRIDE = 2
PAD = 2
CNN_FACTOR = STRIDE ** N_LAYERS


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x (Cin, H, W), w (Cout, Cin, K, K) with stride 2 / pad 2. Returns (out, windows)."""
    xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD)))
    win = sliding_window_view(xp, (KSIZE, KSIZE), axis=(1, 2))[:, ::STRIDE, ::STRIDE]
    out = np.einsum("chwij,ocij->ohw", win, w, optimize=True) + b[:, None, None]
    return out, win


def _conv_backward(dout, win, w, in_shape):
    dw = np.einsum("ohw,chwij->ocij", dout, win, optimize=True)
    db = dout.sum(axis=(1, 2))
    dwin = np.einsum("ohw,ocij->chwij", dout, w, optimize=True)
    c, hgt, wid = in_shape
    dxp = np.zeros((c, hgt + 2 * PAD, wid + 2 * PAD))
    ho, wo = dout.shape[1:]
    for i in range(KSIZE):
        for j in range(KSIZE):
            dxp[:, i:i + STRIDE * ho:STRIDE, j:j + STRIDE * wo:STRIDE] += dwin[:, :, :, i, j]
    return dxp[:, PAD:PAD + hgt, PAD:PAD + wid], dw, db


def init_cnn(seed: int = 0) -> dict[str, np.ndarray]:
    """He-normal hidden kernels, zero biases, zero 1x1 head (so the correction starts at 0)."""
    rng = np.random.default_rng(seed)
    params = {}
    cin = 1
    for layer in range(N_LAYERS):
        fan_in = cin * KSIZE * KSIZE
        params[f"w{layer}"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (CHANNELS, cin, KSIZE, KSIZE))
        params[f"b{layer}"] = np.zeros(CHANNELS)
        cin = CHANNELS
    params["w_head"] = np.zeros(CHANNELS)
    params["b_head"] = np.zeros(1)
    return params


def cnn_forward(params: dict, z_centered: np.ndarray):
    """Correction raster of shape input/16 and the cache needed by ``cnn_backward``."""
    x = np.asarray(z_centered, dtype=np.float64)[None]
    if x.shape[1] % CNN_FACTOR or x.shape[2] % CNN_FACTOR:
        raise UnsupportedFactorError(f"input dims {x.shape[1:]} not divisible by {CNN_FACTOR}")
    cache = []
    for layer in range(N_LAYERS):
        pre, win = _conv_forward(x, params[f"w{layer}"], params[f"b{layer}"])
        cache.append((x.shape, win, pre))
        x = np.maximum(pre, 0.0)
    out = np.einsum("c,chw->hw", params["w_head"], x) + params["b_head"][0]
    cache.append(x)
    return out, cache


def cnn_backward(params: dict, cache, upstream: np.ndarray):
    """Parameter gradients (and input gradient) for d(loss)/d(correction) = ``upstream``."""
    feat = cache[-1]
    grads = {
        "w_head": np.einsum("hw,chw->c", upstream, feat),
        "b_head": np.array([upstream.sum()]),
    }
    dx = params["w_head"][:, None, None] * upstream[None]
    for layer in reversed(range(N_LAYERS)):
        in_shape, win, pre = cache[layer]
        dpre = dx * (pre > 0.0)
        dx, grads[f"w{layer}"], grads[f"b{layer}"] = _conv_backward(dpre, win, params[f"w{layer}"], in_shape)
    return grads, dx[0]


# ---------------------------------------------------------------------------

@dataclass
class Downsampler:
    kind: str = AVG_POOL
    factor: int = 16
    params: dict = field(default_factory=dict)
    sigma_spatial: float = 2.0
    sigma_range: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown downsampler kind {self.kind!r}")
        if self.kind == SMALL_CNN and self.factor != CNN_FACTOR:
            raise UnsupportedFactorError(f"SmallCnn is built for factor {CNN_FACTOR}, got {self.factor}")
        if self.kind not in TRAINABLE and self.params:
            raise ValueError(f"{self.kind} has no trainable parameters")

    @classmethod
    def direct_map(cls, coarse_shape: tuple[int, int], factor: int) -> "Downsampler":
        return cls(DIRECT_MAP, factor, {"correction": np.zeros(coarse_shape)})

    @classmethod
    def small_cnn(cls, seed: int = 0) -> "Downsampler":
        return cls(SMALL_CNN, CNN_FACTOR, init_cnn(seed))

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE

    def copy(self) -> "Downsampler":
        return Downsampler(self.kind, self.factor, {k: v.copy() for k, v in self.params.items()},
                           self.sigma_spatial, self.sigma_range)

    def __call__(self, z: ElevationMap) -> ElevationMap:
        return downsample(self, z)

    def backward(self, z: ElevationMap, grad_coarse: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(coarse elevation)."""
        if self.kind == DIRECT_MAP:
            return {"correction": np.array(grad_coarse, dtype=np.float64)}
        if self.kind == SMALL_CNN:
            _, cache = cnn_forward(self.params, z.z - z.z.mean())
            grads, _ = cnn_backward(self.params, cache, np.asarray(grad_coarse, dtype=np.float64))
            return grads
        return {}

    # -- serialisation ------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        """DirectMap -> raw raster (.bin); SmallCnn -> flat float64 file + JSON manifest."""
        path = Path(path)
        meta = {"kind": self.kind, "factor": self.factor,
                "sigma_spatial": self.sigma_spatial, "sigma_range": self.sigma_range}
        if self.kind == DIRECT_MAP:
            write_raw(self.params["correction"], float(self.factor), path.with_suffix(".bin"))
        elif self.kind == SMALL_CNN:
            offset = 0
            tensors = []
            with open(path.with_suffix(".f64"), "wb") as fh:
                for name in sorted(self.params):
                    arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                    fh.write(arr.tobytes())
                    tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
                    offset += arr.size
            meta["tensors"] = tensors
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path.with_suffix(".json")

    @classmethod
    def load(cls, path: str | Path) -> "Downsampler":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        params = {}
        if meta["kind"] == DIRECT_MAP:
            params["correction"] = np.array(read_raw(path.with_suffix(".bin")).z)
        elif meta["kind"] == SMALL_CNN:
            flat = np.fromfile(path.with_suffix(".f64"), dtype="<f8")
            for t in meta["tensors"]:
                n = int(np.prod(t["shape"])) if t["shape"] else 1
                params[t["name"]] = flat[t["offset"]:t["offset"] + n].reshape(t["shape"]).copy()
        return cls(meta["kind"], int(meta["factor"]), params, meta["sigma_spatial"], meta["sigma_range"])


def downsample(d: Downsampler, z: ElevationMap) -> ElevationMap:
    k = d.factor
    if d.kind == AVG_POOL:
        return avg_pool(z, k)
    if d.kind in (BILATERAL_AVG, BILATERAL_MAX):
        smooth = ElevationMap(bilateral_filter(z.z, d.sigma_spatial, d.sigma_range), z.cell_size)
        return avg_pool(smooth, k) if d.kind == BILATERAL_AVG else max_pool(smooth, k)
    base = avg_pool(z, k)
    if d.kind == DIRECT_MAP:
        corr = d.params["correction"]
        if corr.shape != base.shape:
            raise ValueError(f"DirectMap correction {corr.shape} does not match coarse dims {base.shape}")
        return base.with_z(base.z + corr)
    corr, _ = cnn_forward(d.params, z.z - z.z.mean())
    return base.with_z(base.z + corr)
