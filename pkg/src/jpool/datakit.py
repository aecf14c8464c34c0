"""Clip splitting, synthetic skeleton-video generation, joint-noise
injection, and dataset file I/O.

Synthetic videos render bright Gaussian blobs (the "joints") moving over a
static textured background; the class decides the trajectory pattern.  Real
datasets would enter through the same manifest + tensor + skeleton files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .jointmap import JointTrack
from .tensor import read_tensor, write_tensor


@dataclass
class VideoSample:
    frames: np.ndarray  # (C, T, H, W)
    joints: JointTrack
    label: int
    video_id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (C, T, H, W), got {self.frames.shape}")
        if self.joints.n_frames != self.frames.shape[1]:
            raise ValueError(
                f"{self.video_id}: {self.joints.n_frames} joint frames vs {self.frames.shape[1]} video frames"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


@dataclass
class Clip:
    frames: np.ndarray
    joints: JointTrack
    start: int


@dataclass
class NoiseSpec:
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


def split_clips(video: VideoSample, clip_len: int = 16, overlap: int = 8) -> list[Clip]:
    """Overlapping windows covering the whole video.

    Starts advance by clip_len - overlap while the window fits; if the last
    window stops short of the final frame, one extra clip flush with the end
    is added so no frames are dropped.  Joint frame indices are re-based per
    clip.
    """
    t = video.n_frames
    if t < clip_len:
        raise ValueError(f"{video.video_id}: {t} frames < clip length {clip_len}")
    if not 0 <= overlap < clip_len:
        raise ValueError(f"overlap must be in [0, clip_len), got {overlap}")
    step = clip_len - overlap
    starts = list(range(0, t - clip_len + 1, step))
    if starts[-1] + clip_len < t:
        starts.append(t - clip_len)
    return [
        Clip(frames=video.frames[:, s : s + clip_len].copy(),
             joints=video.joints.frame_slice(s, s + clip_len), start=s)
        for s in starts
    ]


def sample_three_clips(video: VideoSample, clip_len: int = 16) -> list[Clip]:
    """The first, middle, and last clip_len frames (useful for short videos)."""
    t = video.n_frames
    if t < clip_len:
        raise ValueError(f"{video.video_id}: {t} frames < clip length {clip_len}")
    starts = [0, (t - clip_len) // 2, t - clip_len]
    return [
        Clip(frames=video.frames[:, s : s + clip_len].copy(),
             joints=video.joints.frame_slice(s, s + clip_len), start=s)
        for s in starts
    ]


def add_joint_noise(joints: JointTrack, spec: NoiseSpec, frame_size) -> JointTrack:
    """White Gaussian noise on joint coordinates, std (alpha*W, alpha*H).

    Independent per joint per frame, seeded; noisy joints may leave the
    frame (the mapping stage clamps them later).  Frame data, visibility and
    temporal indices are untouched.
    """
    w, h = frame_size
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(joints.xy.shape)
    xy = joints.xy + noise * np.array([spec.alpha * w, spec.alpha * h])
    return JointTrack(xy=xy, visible=joints.visible.copy(), joint_names=joints.joint_names)


# Joint offsets around the figure center, (dx, dy) in pixels.
_JOINT_OFFSETS = np.array([(0.0, -6.0), (-6.0, 0.0), (6.0, 0.0), (0.0, 6.0)])
_PATTERNS = ("up", "down", "circle", "scissor")


def _trajectory(pattern: str, t_frac: np.ndarray, travel: float, phase: float):
    """Center displacement (dx(t), dy(t)) for one trajectory pattern."""
    if pattern == "up":
        return np.zeros_like(t_frac), -travel * t_frac
    if pattern == "down":
        return np.zeros_like(t_frac), travel * t_frac
    if pattern == "circle":
        ang = 2 * math.pi * t_frac + phase
        r = travel / 2.0
        return r * (np.cos(ang) - math.cos(phase)), r * (np.sin(ang) - math.sin(phase))
    if pattern == "scissor":
        return np.zeros_like(t_frac), np.zeros_like(t_frac)
    raise ValueError(f"unknown pattern {pattern!r}")


def synth_generate(n_classes: int, n_videos: int, shape=(1, 16, 32, 32), n_joints: int = 4,
                   seed: int = 0) -> list[VideoSample]:
    """Deterministic synthetic dataset of moving-blob videos.

    Each video renders n_joints bright Gaussian blobs on a static textured
    background; the class (cycled over translate-up / translate-down /
    circular / scissor patterns) sets the trajectory of the figure.  Blob
    centers are the ground-truth joints.  Labels cycle 0..n_classes-1 so
    classes stay balanced.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_joints > len(_JOINT_OFFSETS):
        raise ValueError(f"at most {len(_JOINT_OFFSETS)} joints supported")
    c, t_len, hh, ww = shape
    seeds = np.random.SeedSequence(seed).spawn(n_videos)
    sigma = 1.3
    margin = float(np.abs(_JOINT_OFFSETS).max()) + 3.0
    samples = []
    for v in range(n_videos):
        rng = np.random.default_rng(seeds[v])
        label = v % n_classes
        pattern = _PATTERNS[label % len(_PATTERNS)]
        speed_scale = 1.0 + 0.35 * (label // len(_PATTERNS))

        travel = (0.55 + 0.15 * rng.random()) * (hh - 2 * margin) * speed_scale
        phase = rng.uniform(0, 2 * math.pi)
        t_frac = np.arange(t_len) / max(t_len - 1, 1)
        dx, dy = _trajectory(pattern, t_frac, travel, phase)
        # start so the whole trajectory stays inside the frame
        x0 = rng.uniform(margin - dx.min(), ww - 1 - margin - dx.max())
        y0 = rng.uniform(margin - dy.min(), hh - 1 - margin - dy.max())
        cx, cy = x0 + dx, y0 + dy

        offsets = np.repeat(_JOINT_OFFSETS[None, :n_joints], t_len, axis=0)  # (T, N, 2)
        if pattern == "scissor":
            swing = 4.0 * np.sin(2 * math.pi * (2 * t_frac) + phase)
            offsets = offsets.copy()
            offsets[:, :, 0] += swing[:, None] * np.sign(_JOINT_OFFSETS[:n_joints, 0] + 0.1)
        xy = np.stack([cx[:, None] + offsets[:, :, 0], cy[:, None] + offsets[:, :, 1]], axis=-1)
        xy = xy.transpose(1, 0, 2)  # (N, T, 2)

        background = 0.08 * rng.random((hh, ww))
        ys, xs = np.mgrid[0:hh, 0:ww]
        frames = np.empty((c, t_len, hh, ww))
        for t in range(t_len):
            img = background.copy()
            for j in range(n_joints):
                jx, jy = xy[j, t]
                img += np.exp(-((xs - jx) ** 2 + (ys - jy) ** 2) / (2 * sigma**2))
            frames[:, t] = img
        # keep values exactly float32-representable so files round-trip bitwise
        frames = frames.astype(np.float32).astype(np.float64)
        samples.append(
            VideoSample(frames=frames, joints=JointTrack(xy=xy), label=label, video_id=f"synth{v:04d}")
        )
    return samples


def write_skeleton(path, joints: JointTrack, frame_size=None) -> None:
    """JSON skeleton file: counts, names, optional frame size, and per-frame
    [x, y, visible] triples per joint."""
    doc = {
        "n_frames": joints.n_frames,
        "n_joints": joints.n_joints,
        "joint_names": joints.joint_names or [f"joint{i}" for i in range(joints.n_joints)],
        "frame_size": list(frame_size) if frame_size is not None else None,
        "frames": [
            [[float(joints.xy[i, t, 0]), float(joints.xy[i, t, 1]), bool(joints.visible[i, t])]
             for i in range(joints.n_joints)]
            for t in range(joints.n_frames)
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def read_skeleton(path) -> tuple[JointTrack, tuple | None]:
    """Read and validate a skeleton file; returns (track, frame_size or None)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not valid JSON at offset {e.pos}: {e.msg}") from e
    try:
        n_frames, n_joints = int(doc["n_frames"]), int(doc["n_joints"])
        frames = doc["frames"]
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: missing skeleton field: {e}") from e
    if len(frames) != n_frames:
        raise ValueError(f"{path}: {len(frames)} frame entries, header says {n_frames}")
    xy = np.empty((n_joints, n_frames, 2))
    visible = np.empty((n_joints, n_frames), dtype=bool)
    for t, frame in enumerate(frames):
        if len(frame) != n_joints:
            raise ValueError(f"{path}: frame {t} lists {len(frame)} joints, header says {n_joints}")
        for i, (x, y, vis) in enumerate(frame):
            xy[i, t] = (x, y)
            visible[i, t] = bool(vis)
    if not np.isfinite(xy).all():
        raise ValueError(f"{path}: non-finite joint coordinate")
    track = JointTrack(xy=xy, visible=visible, joint_names=doc.get("joint_names"))
    fs = doc.get("frame_size")
    return track, (tuple(fs) if fs else None)


def write_video_tensor(path, frames: np.ndarray) -> None:
    if frames.ndim != 4:
        raise ValueError(f"video tensor must be (C, T, H, W), got {frames.shape}")
    write_tensor(path, frames)


def read_video_tensor(path) -> np.ndarray:
    frames = read_tensor(path)
    if frames.ndim != 4:
        raise ValueError(f"{path}: video tensor must be 4-D, got shape {frames.shape}")
    return frames


def write_dataset(dirpath, samples, split_of=None, seed: int | None = None) -> str:
    """Write tensors, skeletons and a manifest under `dirpath`.

    `split_of` maps a VideoSample to its split tag (default: everything
    "train").  Returns the manifest path.
    """
    os.makedirs(dirpath, exist_ok=True)
    items = []
    for s in samples:
        vid_rel, skel_rel = f"{s.video_id}.jpt", f"{s.video_id}.skel.json"
        write_video_tensor(os.path.join(dirpath, vid_rel), s.frames)
        h, w = s.frames.shape[2], s.frames.shape[3]
        write_skeleton(os.path.join(dirpath, skel_rel), s.joints, frame_size=(w, h))
        items.append({
            "id": s.video_id, "video": vid_rel, "skeleton": skel_rel,
            "label": int(s.label), "split": split_of(s) if split_of else "train",
        })
    manifest = {"seed": seed, "items": items}
    path = os.path.join(dirpath, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def read_dataset_manifest(path) -> dict:
    """Read a manifest and check every referenced file exists."""
    with open(path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    if "items" not in doc or not isinstance(doc["items"], list):
        raise ValueError(f"{path}: manifest needs an 'items' list")
    for item in doc["items"]:
        for key in ("id", "video", "skeleton", "label", "split"):
            if key not in item:
                raise ValueError(f"{path}: item {item.get('id', '?')} missing {key!r}")
        for key in ("video", "skeleton"):
            target = os.path.join(base, item[key])
            if not os.path.exists(target):
                raise ValueError(f"{path}: item {item['id']}: missing file {item[key]}")
    doc["_base"] = base
    return doc


def load_samples(manifest: dict, split: str | None = None) -> list[VideoSample]:
    """Materialize VideoSamples for one split (or all) of a read manifest."""
    base = manifest["_base"]
    out = []
    for item in manifest["items"]:
        if split is not None and item["split"] != split:
            continue
        frames = read_video_tensor(os.path.join(base, item["video"]))
        joints, _ = read_skeleton(os.path.join(base, item["skeleton"]))
        out.append(VideoSample(frames=frames, joints=joints, label=item["label"], video_id=item["id"]))
    return out
