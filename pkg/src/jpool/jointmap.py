"""Map body-joint positions in video frames to voxels of 3D feature maps.

Two schemes: ratio scaling (output/input size ratio per axis) and layer-wise
coordinate mapping that folds kernel/stride/padding arithmetic through every
preceding layer.  Real-valued coordinates are kept through the whole chain
and rounded exactly once at the end (round half up), then clamped into the
target map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net3d import CONV, POOL, RELU, SIGMOID, LayerSpec, NetworkConfig


@dataclass
class JointTrack:
    """Per-video joint coordinates: (N joints, T frames, xy) plus visibility.

    Coordinates are pixels with the origin at the top-left; the frame index
    within the clip plays the role of the temporal coordinate.  Coordinates
    must be finite but may lie outside the frame (mapping clamps them).
    """

    xy: np.ndarray
    visible: np.ndarray | None = None
    joint_names: list[str] | None = None

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.xy.ndim != 3 or self.xy.shape[2] != 2:
            raise ValueError(f"xy must be (N, T, 2), got {self.xy.shape}")
        if not np.isfinite(self.xy).all():
            raise ValueError("joint coordinates must be finite")
        if self.visible is None:
            self.visible = np.ones(self.xy.shape[:2], dtype=bool)
        else:
            self.visible = np.asarray(self.visible, dtype=bool)
            if self.visible.shape != self.xy.shape[:2]:
                raise ValueError("visible must be (N, T)")

    @property
    def n_joints(self) -> int:
        return self.xy.shape[0]

    @property
    def n_frames(self) -> int:
        return self.xy.shape[1]

    def frame_slice(self, start: int, stop: int) -> "JointTrack":
        """Frames [start, stop) with the temporal index re-based to 0."""
        return JointTrack(self.xy[:, start:stop].copy(), self.visible[:, start:stop].copy(),
                          self.joint_names)


@dataclass(frozen=True)
class GridPoint:
    """Integer voxel index (x, y, t) in a feature map, after rounding and
    clamping, plus the pre-rounding reals and whether the input coordinate
    had to be clamped into the frame."""

    x: int
    y: int
    t: int
    raw: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))
    clamped_input: bool = False


def round_half_up(v):
    """floor(v + 0.5); ties go up, matching the closed-form derivations."""
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64)


def _clamp(v, lo, hi):
    return np.clip(v, lo, hi)


def ratio_scale(joint, clip_shape, map_shape) -> GridPoint:
    """Scale (x_v, y_v, t_v) by the feature-map/clip size ratio per axis.

    clip_shape and map_shape are (length, height, width).  Out-of-frame
    inputs are clamped into the frame first and flagged.
    """
    x, y, t = (float(c) for c in joint)
    l_in, h_in, w_in = clip_shape
    l, h, w = map_shape
    if min(l, h, w) < 1:
        raise ValueError(f"map extents must be >= 1, got {map_shape}")
    cx, cy, ct = _clamp(x, 0, w_in - 1), _clamp(y, 0, h_in - 1), _clamp(t, 0, l_in - 1)
    clamped = (cx, cy, ct) != (x, y, t)
    raw = (cx * w / w_in, cy * h / h_in, ct * l / l_in)
    xi, yi, ti = (int(round_half_up(v)) for v in raw)
    return GridPoint(
        x=int(_clamp(xi, 0, w - 1)), y=int(_clamp(yi, 0, h - 1)), t=int(_clamp(ti, 0, l - 1)),
        raw=raw, clamped_input=clamped,
    )


def map_through_layer(p, spec: LayerSpec):
    """One layer of the coordinate recurrence, real-valued (no rounding).

    conv/pool: per axis, x' = (x + padding - (kernel-1)/2) / stride.
    relu/sigmoid leave coordinates unchanged.  `p` is (x, y, t); entries may
    be scalars or numpy arrays.
    """
    x, y, t = p
    if spec.kind in (RELU, SIGMOID):
        return (x, y, t)
    if spec.kind not in (CONV, POOL):
        raise ValueError(f"{spec.name}: coordinates do not map through {spec.kind} layers")
    kt, ky, kx = spec.kernel
    st, sy, sx = spec.stride
    pt, py, px = spec.padding
    return (
        (x + px - (kx - 1) / 2.0) / sx,
        (y + py - (ky - 1) / 2.0) / sy,
        (t + pt - (kt - 1) / 2.0) / st,
    )


def premap_to_layer(cfg: NetworkConfig, layer: str, x, y, t):
    """Pre-rounding (x, y, t) at `layer`, folded through all preceding layers.

    Accepts scalars or broadcastable numpy arrays; no input clamping.
    """
    idx = cfg.index(layer)
    p = (np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64),
         np.asarray(t, dtype=np.float64))
    for spec in cfg.layers[: idx + 1]:
        p = map_through_layer(p, spec)
    return p


def map_to_layer(joint, cfg: NetworkConfig, layer: str) -> GridPoint:
    """Map one joint to an integer grid point of the named layer's maps.

    The input is clamped into the configured frame, folded through the
    recurrence keeping reals, rounded once (half up), and clamped into the
    layer's extents.
    """
    x, y, t = (float(c) for c in joint)
    _, l_in, h_in, w_in = cfg.input_shape
    cx, cy, ct = _clamp(x, 0, w_in - 1), _clamp(y, 0, h_in - 1), _clamp(t, 0, l_in - 1)
    clamped = (cx, cy, ct) != (x, y, t)
    rx, ry, rt = premap_to_layer(cfg, layer, cx, cy, ct)
    _, l, h, w = cfg.shape_at(layer)
    return GridPoint(
        x=int(_clamp(round_half_up(rx), 0, w - 1)),
        y=int(_clamp(round_half_up(ry), 0, h - 1)),
        t=int(_clamp(round_half_up(rt), 0, l - 1)),
        raw=(float(rx), float(ry), float(rt)),
        clamped_input=clamped,
    )


def closed_form_c3d(joint, i: int):
    """Pre-rounding coordinates in the i-th conv group of a C3D-patterned net.

    Spatial axes: (v - (2^(i-1) - 1)/2) / 2^(i-1), valid for i >= 1.
    Temporal axis: (t - (2^(i-2) - 1)/2) / 2^(i-2), valid for i >= 2; at
    i = 1 no pooling has been applied yet, so the temporal coordinate is
    returned unchanged (the layer-wise recurrence gives the identity there).
    Returns (x, y, t) reals; inputs may be scalars or numpy arrays.
    """
    if not 1 <= i <= 5:
        raise ValueError(f"conv group index {i} outside the valid range 1..5")
    x, y, t = (np.asarray(c, dtype=np.float64) for c in joint)
    ds = 2.0 ** (i - 1)
    out_x = (x - (ds - 1) / 2.0) / ds
    out_y = (y - (ds - 1) / 2.0) / ds
    if i == 1:
        out_t = t + 0.0
    else:
        dt = 2.0 ** (i - 2)
        out_t = (t - (dt - 1) / 2.0) / dt
    return (out_x, out_y, out_t)
