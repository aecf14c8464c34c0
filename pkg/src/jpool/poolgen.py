"""Heat-map construction and feature-map pooling.

A heat-map stack holds one l x h x w weight volume per (frame, joint) pair,
ordered frame-major (channel m = t * N + i).  Pooling is either direct
sampling at grid points (one voxel, or the max over a 3x3x3 cube) or a
bilinear product between the flattened stack and the flattened feature
maps; with one-hot heat maps the two routes agree bitwise.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .jointmap import GridPoint, JointTrack, map_to_layer
from .net3d import NetworkConfig
from .tensor import matmul, read_tensor, write_tensor


@dataclass
class HeatMapStack:
    """M = n_joints * clip_len pooling-weight volumes, values in [0, 1]."""

    maps: np.ndarray  # (M, l, h, w)
    n_joints: int
    clip_len: int

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 4:
            raise ValueError(f"maps must be (M, l, h, w), got {self.maps.shape}")
        if self.maps.shape[0] != self.n_joints * self.clip_len:
            raise ValueError(
                f"{self.maps.shape[0]} channels != n_joints*clip_len = {self.n_joints * self.clip_len}"
            )
        if self.maps.min() < 0.0 or self.maps.max() > 1.0:
            raise ValueError("heat-map values must lie in [0, 1]")

    @property
    def n_channels(self) -> int:
        return self.maps.shape[0]

    def channel(self, frame: int, joint: int) -> np.ndarray:
        return self.maps[frame * self.n_joints + joint]


@dataclass
class PooledMatrix:
    """Pooled activations, one row per (frame, joint) pair in stack order."""

    values: np.ndarray  # (M, C)
    n_joints: int
    clip_len: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be (M, C), got {self.values.shape}")
        if self.values.shape[0] != self.n_joints * self.clip_len:
            raise ValueError("row count != n_joints * clip_len")

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def make_heatmaps(joints: JointTrack, cfg: NetworkConfig, layer: str,
                  clip_len: int | None = None) -> HeatMapStack:
    """Hard (one-hot) heat maps: channel (t, i) is 1 at the mapped voxel of
    joint i at frame t and 0 elsewhere.  Invisible joints still get a map."""
    length = clip_len if clip_len is not None else joints.n_frames
    if joints.n_frames < length:
        raise ValueError(f"track covers {joints.n_frames} frames, clip needs {length}")
    n = joints.n_joints
    _, l, h, w = cfg.shape_at(layer)
    maps = np.zeros((n * length, l, h, w))
    for t in range(length):
        for i in range(n):
            gp = map_to_layer((joints.xy[i, t, 0], joints.xy[i, t, 1], t), cfg, layer)
            maps[t * n + i, gp.t, gp.y, gp.x] = 1.0
    return HeatMapStack(maps=maps, n_joints=n, clip_len=length)


def sample_pool(featmaps: np.ndarray, p: GridPoint, neighborhood: int = 1) -> np.ndarray:
    """Per-channel activation at `p` (neighborhood 1), or the per-channel max
    over the 3x3x3 cube centered there, truncated at the map borders."""
    c, l, h, w = featmaps.shape
    if not (0 <= p.t < l and 0 <= p.y < h and 0 <= p.x < w):
        raise ValueError(f"grid point ({p.x}, {p.y}, {p.t}) outside maps {featmaps.shape}")
    if neighborhood == 1:
        return featmaps[:, p.t, p.y, p.x].copy()
    if neighborhood == 3:
        cube = featmaps[:, max(p.t - 1, 0): p.t + 2, max(p.y - 1, 0): p.y + 2,
                        max(p.x - 1, 0): p.x + 2]
        return cube.max(axis=(1, 2, 3))
    raise ValueError(f"neighborhood must be 1 or 3, got {neighborhood}")


def bilinear_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """A @ B.T for A (M, K) against B (C, K), deterministic accumulation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"column counts must agree: {a.shape} vs {b.shape}")
    return matmul(a, b.T)


def pool_by_heatmaps(stack: HeatMapStack, featmaps: np.ndarray) -> PooledMatrix:
    """Contract a heat-map stack against feature maps of the same l, h, w."""
    if stack.maps.shape[1:] != featmaps.shape[1:]:
        raise ValueError(
            f"heat maps {stack.maps.shape[1:]} and feature maps {featmaps.shape[1:]} disagree"
        )
    a = stack.maps.reshape(stack.n_channels, -1)
    b = featmaps.reshape(featmaps.shape[0], -1)
    return PooledMatrix(values=bilinear_product(a, b),
                        n_joints=stack.n_joints, clip_len=stack.clip_len)


def bilinear_general_fwd(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """General bilinear product A (M,K1) . W (K1,K2) . B^T (K2,C) -> (M,C)."""
    a, w, b = (np.asarray(m, dtype=np.float64) for m in (a, w, b))
    if a.shape[1] != w.shape[0] or w.shape[1] != b.shape[1]:
        raise ValueError(f"inner dimensions disagree: {a.shape}, {w.shape}, {b.shape}")
    return matmul(matmul(a, w), b.T)


def bilinear_general_bwd(d_p: np.ndarray, a: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Gradients (dA, dW, dB) of the general bilinear product.

    dA = dP . B . W^T,  dB = dP^T . A . W,  dW = A^T . dP . B.
    """
    d_p, a, w, b = (np.asarray(m, dtype=np.float64) for m in (d_p, a, w, b))
    if d_p.shape != (a.shape[0], b.shape[0]):
        raise ValueError(f"dP shape {d_p.shape} != ({a.shape[0]}, {b.shape[0]})")
    if a.shape[1] != w.shape[0] or w.shape[1] != b.shape[1]:
        raise ValueError(f"inner dimensions disagree: {a.shape}, {w.shape}, {b.shape}")
    d_a = matmul(matmul(d_p, b), w.T)
    d_b = matmul(matmul(d_p.T, a), w)
    d_w = matmul(matmul(a.T, d_p), b)
    return d_a, d_w, d_b


def save_pooled(path, pm: PooledMatrix, layer: str | None = None) -> None:
    """Tensor file plus a JSON sidecar carrying the layout."""
    write_tensor(path, pm.values)
    sidecar = {
        "n_joints": pm.n_joints,
        "clip_len": pm.clip_len,
        "channels": pm.channels,
        "layer": layer,
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def load_pooled(path) -> tuple[PooledMatrix, dict]:
    values = read_tensor(path)
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    pm = PooledMatrix(values=values, n_joints=sidecar["n_joints"], clip_len=sidecar["clip_len"])
    if pm.channels != sidecar["channels"]:
        raise ValueError(f"{path}: sidecar says {sidecar['channels']} channels, file has {pm.channels}")
    return pm, sidecar


def save_heatmaps(path, stack: HeatMapStack, layer: str | None = None) -> None:
    write_tensor(path, stack.maps)
    with open(str(path) + ".json", "w") as f:
        json.dump({"n_joints": stack.n_joints, "clip_len": stack.clip_len, "layer": layer}, f, indent=2)


def load_heatmaps(path) -> tuple[HeatMapStack, dict]:
    maps = read_tensor(path)
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    return HeatMapStack(maps=maps, n_joints=sidecar["n_joints"], clip_len=sidecar["clip_len"]), sidecar
