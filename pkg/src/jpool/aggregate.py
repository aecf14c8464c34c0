"""Aggregation of per-clip pooled matrices into fixed-length video
descriptors, plus late score fusion.

Basic scheme: concatenate the pooled rows of each clip (frame-major),
average over clips, L2-normalize; dimension C*N*L.  Advanced scheme:
max+min pooling over frames within each clip and again over clips;
dimension 4*C*N, independent of clip length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .poolgen import PooledMatrix
from .tensor import l2_normalize, read_tensor, write_tensor


@dataclass
class Descriptor:
    """Flat video feature with its layout; unit L2 norm unless all-zero."""

    values: np.ndarray
    kind: str  # "basic" | "advanced"
    channels: int
    n_joints: int
    clip_len: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        want = self.expected_length(self.kind, self.channels, self.n_joints, self.clip_len)
        if self.values.size != want:
            raise ValueError(f"{self.kind} descriptor should have {want} values, got {self.values.size}")

    @staticmethod
    def expected_length(kind: str, channels: int, n_joints: int, clip_len: int) -> int:
        if kind == "basic":
            return channels * n_joints * clip_len
        if kind == "advanced":
            return 4 * channels * n_joints
        raise ValueError(f"unknown descriptor kind {kind!r}")


def clip_vector_basic(pm: PooledMatrix) -> np.ndarray:
    """Concatenate the M pooled rows, frame-major then joint: length C*N*L."""
    return pm.values.reshape(-1).copy()


def frame_groups(pm: PooledMatrix) -> list[np.ndarray]:
    """The L per-frame vectors, each the N pooled rows of one frame
    concatenated (length N*C)."""
    n, length = pm.n_joints, pm.clip_len
    return [pm.values[t * n : (t + 1) * n].reshape(-1).copy() for t in range(length)]


def video_descriptor_basic(clip_vectors, channels: int, n_joints: int, clip_len: int) -> Descriptor:
    """Elementwise mean over clips, then L2 normalization."""
    if len(clip_vectors) == 0:
        raise ValueError("no clips to aggregate")
    stack = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in clip_vectors])
    if stack.shape[1] != channels * n_joints * clip_len:
        raise ValueError(f"clip vectors have length {stack.shape[1]}, layout says {channels * n_joints * clip_len}")
    return Descriptor(values=l2_normalize(stack.mean(axis=0)), kind="basic",
                      channels=channels, n_joints=n_joints, clip_len=clip_len)


def maxmin_pool(vectors) -> np.ndarray:
    """[elementwise max, elementwise min] over a non-empty set of equal-length
    vectors; length doubles."""
    if len(vectors) == 0:
        raise ValueError("maxmin_pool of an empty list")
    stack = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors])
    return np.concatenate([stack.max(axis=0), stack.min(axis=0)])


def video_descriptor_advanced(clip_frame_groups, channels: int, n_joints: int,
                              clip_len: int) -> Descriptor:
    """Max+min over the L frame vectors of each clip, then max+min over
    clips, then L2 normalization; length 4*C*N."""
    if len(clip_frame_groups) == 0:
        raise ValueError("no clips to aggregate")
    per_clip = []
    for groups in clip_frame_groups:
        if len(groups) == 0:
            raise ValueError("clip with no frame vectors")
        per_clip.append(maxmin_pool(groups))
    values = l2_normalize(maxmin_pool(per_clip))
    return Descriptor(values=values, kind="advanced", channels=channels,
                      n_joints=n_joints, clip_len=clip_len)


def fuse_scores(score_lists, weights=None) -> np.ndarray:
    """Weighted elementwise sum of per-model class scores.

    Weights default to equal and must sum to 1.
    """
    if len(score_lists) == 0:
        raise ValueError("no score vectors to fuse")
    stack = np.stack([np.asarray(s, dtype=np.float64).reshape(-1) for s in score_lists])
    if len(set(map(len, score_lists))) > 1 or stack.ndim != 2:
        raise ValueError("score vectors must share the class count")
    if weights is None:
        weights = np.full(len(score_lists), 1.0 / len(score_lists))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(score_lists),):
            raise ValueError("one weight per model required")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {weights.sum()}, expected 1")
    return weights @ stack


def save_descriptor(path, desc: Descriptor, video_id: str | None = None,
                    label: int | None = None, split: str | None = None) -> None:
    write_tensor(path, desc.values)
    sidecar = {
        "kind": desc.kind, "channels": desc.channels, "n_joints": desc.n_joints,
        "clip_len": desc.clip_len, "video_id": video_id, "label": label, "split": split,
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def load_descriptor(path) -> tuple[Descriptor, dict]:
    values = read_tensor(path)
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    desc = Descriptor(values=values, kind=sidecar["kind"], channels=sidecar["channels"],
                      n_joints=sidecar["n_joints"], clip_len=sidecar["clip_len"])
    return desc, sidecar
