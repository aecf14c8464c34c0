"""3D convolutional networks from a declarative layer list.

Layers operate on single clips shaped (channels, length, height, width) in
float64, with analytic backward passes for every differentiable layer.
The default architectures follow the classic C3D pattern: 3x3x3 convs with
stride 1 / padding 1 throughout, 2x2x2 pools except the first, which is
1x2x2 so the temporal axis is downsampled one time fewer than the spatial
axes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import read_tensor, write_tensor

CONV = "conv3d"
POOL = "pool3d"
RELU = "relu"
SIGMOID = "sigmoid"
FC = "fc"
SOFTMAX = "softmax"

_SHAPELESS = (RELU, SIGMOID, SOFTMAX)


@dataclass
class LayerSpec:
    """One layer: kind plus whatever shape parameters that kind needs.

    kernel/stride/padding are (temporal, vertical, horizontal) triples.
    """

    kind: str
    name: str
    channels_out: int | None = None
    kernel: tuple[int, int, int] | None = None
    stride: tuple[int, int, int] | None = None
    padding: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind in _SHAPELESS:
            if any(p is not None for p in (self.channels_out, self.kernel, self.stride, self.padding)):
                raise ValueError(f"{self.name}: {self.kind} layers carry no shape parameters")
            return
        if self.kind == FC:
            if not self.channels_out or self.channels_out < 1:
                raise ValueError(f"{self.name}: fc needs channels_out >= 1")
            return
        if self.kind not in (CONV, POOL):
            raise ValueError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.kind == CONV and (not self.channels_out or self.channels_out < 1):
            raise ValueError(f"{self.name}: conv3d needs channels_out >= 1")
        self.kernel = tuple(int(k) for k in self.kernel)
        self.stride = tuple(int(s) for s in (self.stride or (1, 1, 1)))
        self.padding = tuple(int(p) for p in (self.padding or (0, 0, 0)))
        if len(self.kernel) != 3 or len(self.stride) != 3 or len(self.padding) != 3:
            raise ValueError(f"{self.name}: kernel/stride/padding must be length-3")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError(f"{self.name}: kernel and stride extents must be >= 1")
        if min(self.padding) < 0:
            raise ValueError(f"{self.name}: padding must be >= 0")


def output_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    """Shape after `spec` applied to `in_shape`.

    Volumes are (C, L, H, W); fc flattens its input and outputs
    (channels_out,).  Spatio-temporal extents follow
    floor((in + 2*pad - kernel)/stride) + 1 and must stay positive.
    """
    if spec.kind in (RELU, SIGMOID, SOFTMAX):
        return tuple(in_shape)
    if spec.kind == FC:
        return (spec.channels_out,)
    if len(in_shape) != 4:
        raise ValueError(f"{spec.name}: expected a (C, L, H, W) input, got {in_shape}")
    c, *ext = in_shape
    out = []
    for axis, (n, k, s, p) in enumerate(zip(ext, spec.kernel, spec.stride, spec.padding)):
        m = (n + 2 * p - k) // s + 1
        if m < 1:
            raise ValueError(
                f"{spec.name}: non-positive output extent on axis {axis} "
                f"(in={n}, kernel={k}, stride={s}, padding={p})"
            )
        out.append(m)
    c_out = spec.channels_out if spec.kind == CONV else c
    return (c_out, *out)


@dataclass
class NetworkConfig:
    """Ordered layer list plus the (C, L, H, W) input shape."""

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int, int]

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names")
        self.shapes()  # raises if any layer yields a non-positive extent

    def index(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(f"unknown layer {name!r}")

    def shapes(self) -> list[tuple]:
        """Output shape after each layer, in order."""
        out = []
        shape = self.input_shape
        for spec in self.layers:
            shape = output_shape(spec, shape)
            out.append(shape)
        return out

    def shape_at(self, name: str) -> tuple:
        return self.shapes()[self.index(name)]

    def to_json(self) -> str:
        layers = []
        for l in self.layers:
            d = {"kind": l.kind, "name": l.name}
            if l.channels_out is not None:
                d["channels"] = l.channels_out
            if l.kernel is not None:
                d["kernel"] = list(l.kernel)
                d["stride"] = list(l.stride)
                d["padding"] = list(l.padding)
            layers.append(d)
        return json.dumps({"input_shape": list(self.input_shape), "layers": layers}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        doc = json.loads(text)
        layers = [
            LayerSpec(
                kind=d["kind"],
                name=d["name"],
                channels_out=d.get("channels"),
                kernel=tuple(d["kernel"]) if "kernel" in d else None,
                stride=tuple(d["stride"]) if "stride" in d else None,
                padding=tuple(d["padding"]) if "padding" in d else None,
            )
            for d in doc["layers"]
        ]
        return cls(layers=layers, input_shape=tuple(doc["input_shape"]))


def save_config(path, cfg: NetworkConfig) -> None:
    with open(path, "w") as f:
        f.write(cfg.to_json())


def load_config(path) -> NetworkConfig:
    with open(path) as f:
        return NetworkConfig.from_json(f.read())


@dataclass
class LayerState:
    """Weights/bias for parameterized layers plus the forward cache."""

    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    cache: dict = field(default_factory=dict)


def init_states(cfg: NetworkConfig, seed: int = 0) -> list[LayerState]:
    """Seeded uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    rng = np.random.default_rng(seed)
    states = []
    shape = cfg.input_shape
    for spec in cfg.layers:
        if spec.kind == CONV:
            c_in = shape[0]
            fan = c_in * math.prod(spec.kernel)
            bound = math.sqrt(6.0 / (fan + spec.channels_out * math.prod(spec.kernel)))
            w = rng.uniform(-bound, bound, size=(spec.channels_out, c_in, *spec.kernel))
            states.append(LayerState(weights=w, bias=np.zeros(spec.channels_out)))
        elif spec.kind == FC:
            d_in = int(np.prod(shape))
            bound = math.sqrt(6.0 / (d_in + spec.channels_out))
            w = rng.uniform(-bound, bound, size=(spec.channels_out, d_in))
            states.append(LayerState(weights=w, bias=np.zeros(spec.channels_out)))
        else:
            states.append(LayerState())
        shape = output_shape(spec, shape)
    return states


def _windows(xp: np.ndarray, kernel, stride):
    """Strided view (C, Lo, Ho, Wo, kd, kh, kw) over a padded volume."""
    st, sy, sx = stride
    w = sliding_window_view(xp, kernel, axis=(1, 2, 3))
    return w[:, ::st, ::sy, ::sx]


def conv3d_fwd(x: np.ndarray, state: LayerState, spec: LayerSpec, train: bool = False) -> np.ndarray:
    """Cross-correlation over (t, y, x) per output channel, plus bias.

    Implemented as im2col + one GEMM; matches the straightforward
    seven-nested-loop definition to float64 round-off.
    """
    pt, py, px = spec.padding
    xp = np.pad(x, ((0, 0), (pt, pt), (py, py), (px, px)))
    win = _windows(xp, spec.kernel, spec.stride)
    c_in, lo, ho, wo = win.shape[:4]
    cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(lo * ho * wo, -1)
    wmat = state.weights.reshape(spec.channels_out, -1)
    out = cols @ wmat.T + state.bias
    if train:
        state.cache = {"cols": cols, "in_shape": x.shape, "pad_shape": xp.shape}
    return out.T.reshape(spec.channels_out, lo, ho, wo)


def conv3d_bwd(d_out: np.ndarray, state: LayerState, spec: LayerSpec):
    """Gradients (dX, dW, dB) of conv3d_fwd; requires the forward cache."""
    if "cols" not in state.cache:
        raise RuntimeError(f"{spec.name}: no forward cache; run conv3d_fwd(train=True) first")
    cols = state.cache["cols"]
    c, l, h, w = state.cache["in_shape"]
    pt, py, px = spec.padding
    st, sy, sx = spec.stride
    kd, kh, kw = spec.kernel
    co, lo, ho, wo = d_out.shape

    dmat = d_out.reshape(co, -1).T  # (positions, C_out)
    db = d_out.sum(axis=(1, 2, 3))
    dw = (dmat.T @ cols).reshape(state.weights.shape)

    dcols = dmat @ state.weights.reshape(co, -1)
    dcols = dcols.reshape(lo, ho, wo, c, kd, kh, kw).transpose(3, 0, 1, 2, 4, 5, 6)
    dxp = np.zeros(state.cache["pad_shape"])
    # scatter per kernel offset: for a fixed offset the strided targets are disjoint
    for d in range(kd):
        for i in range(kh):
            for j in range(kw):
                dxp[:, d : d + st * lo : st, i : i + sy * ho : sy, j : j + sx * wo : sx] += dcols[:, :, :, :, d, i, j]
    dx = dxp[:, pt : pt + l, py : py + h, px : px + w]
    return dx, dw, db


def maxpool3d_fwd(x: np.ndarray, state: LayerState, spec: LayerSpec, train: bool = False) -> np.ndarray:
    pt, py, px = spec.padding
    if max(spec.padding) > 0:
        xp = np.pad(x, ((0, 0), (pt, pt), (py, py), (px, px)), constant_values=-np.inf)
    else:
        xp = x
    win = _windows(xp, spec.kernel, spec.stride)
    c, lo, ho, wo = win.shape[:4]
    flat = win.reshape(c, lo, ho, wo, -1)
    idx = flat.argmax(axis=-1)  # first index on ties, in window scan order
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if train:
        state.cache = {"idx": idx, "in_shape": x.shape, "pad_shape": xp.shape}
    return out


def maxpool3d_bwd(d_out: np.ndarray, state: LayerState, spec: LayerSpec) -> np.ndarray:
    if "idx" not in state.cache:
        raise RuntimeError(f"{spec.name}: no forward cache; run maxpool3d_fwd(train=True) first")
    idx = state.cache["idx"]
    c, l, h, w = state.cache["in_shape"]
    pt, py, px = spec.padding
    st, sy, sx = spec.stride
    kd, kh, kw = spec.kernel
    _, lo, ho, wo = idx.shape

    dt, rem = np.divmod(idx, kh * kw)
    dy, dx_ = np.divmod(rem, kw)
    cg, lg, hg, wg = np.indices(idx.shape, sparse=False)
    t_abs = lg * st + dt
    y_abs = hg * sy + dy
    x_abs = wg * sx + dx_
    dxp = np.zeros(state.cache["pad_shape"])
    np.add.at(dxp, (cg, t_abs, y_abs, x_abs), d_out)
    return dxp[:, pt : pt + l, py : py + h, px : px + w]


def relu_fwd(x: np.ndarray, state: LayerState, train: bool = False) -> np.ndarray:
    if train:
        state.cache = {"mask": x > 0}
    return np.maximum(x, 0.0)


def relu_bwd(d_out: np.ndarray, state: LayerState) -> np.ndarray:
    return d_out * state.cache["mask"]


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_fwd(x: np.ndarray, state: LayerState, train: bool = False) -> np.ndarray:
    s = sigmoid(x)
    if train:
        state.cache = {"s": s}
    return s


def sigmoid_bwd(d_out: np.ndarray, state: LayerState) -> np.ndarray:
    s = state.cache["s"]
    return d_out * s * (1.0 - s)


def fc_fwd(x: np.ndarray, state: LayerState, train: bool = False) -> np.ndarray:
    xf = x.reshape(-1)
    if train:
        state.cache = {"x": xf, "in_shape": x.shape}
    return state.weights @ xf + state.bias


def fc_bwd(d_out: np.ndarray, state: LayerState):
    if "x" not in state.cache:
        raise RuntimeError("fc: no forward cache; run fc_fwd(train=True) first")
    xf = state.cache["x"]
    dx = (state.weights.T @ d_out).reshape(state.cache["in_shape"])
    dw = np.outer(d_out, xf)
    return dx, dw, d_out.copy()


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over a 1-D score vector."""
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def layer_fwd(x, spec: LayerSpec, state: LayerState, train: bool = False):
    if spec.kind == CONV:
        return conv3d_fwd(x, state, spec, train)
    if spec.kind == POOL:
        return maxpool3d_fwd(x, state, spec, train)
    if spec.kind == RELU:
        return relu_fwd(x, state, train)
    if spec.kind == SIGMOID:
        return sigmoid_fwd(x, state, train)
    if spec.kind == FC:
        return fc_fwd(x, state, train)
    if spec.kind == SOFTMAX:
        return softmax_fwd(x)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def network_fwd(cfg: NetworkConfig, states, clip: np.ndarray, upto: str | None = None,
                train: bool = False) -> np.ndarray:
    """Run the network through the layer named `upto` (inclusive).

    With `upto=None` the whole stack runs; if the last layer is softmax the
    result is a class-score distribution.
    """
    if tuple(clip.shape) != cfg.input_shape:
        raise ValueError(f"clip shape {clip.shape} != configured input {cfg.input_shape}")
    stop = cfg.index(upto) if upto is not None else len(cfg.layers) - 1
    x = clip
    for spec, state in zip(cfg.layers[: stop + 1], states[: stop + 1]):
        x = layer_fwd(x, spec, state, train)
    return x


def network_bwd(cfg: NetworkConfig, states, d_out: np.ndarray, upto: str | None = None):
    """Backpropagate d_out from the layer named `upto` to the input.

    Returns (d_input, grads) where grads[i] is (dW, dB) for parameterized
    layers and None otherwise, indexed like cfg.layers.  Softmax has no
    backward here; training losses differentiate through it analytically.
    """
    stop = cfg.index(upto) if upto is not None else len(cfg.layers) - 1
    grads: list = [None] * len(cfg.layers)
    d = d_out
    for i in range(stop, -1, -1):
        spec, state = cfg.layers[i], states[i]
        if spec.kind == CONV:
            d, dw, db = conv3d_bwd(d, state, spec)
            grads[i] = (dw, db)
        elif spec.kind == POOL:
            d = maxpool3d_bwd(d, state, spec)
        elif spec.kind == RELU:
            d = relu_bwd(d, state)
        elif spec.kind == SIGMOID:
            d = sigmoid_bwd(d, state)
        elif spec.kind == FC:
            d, dw, db = fc_bwd(d, state)
            grads[i] = (dw, db)
        else:
            raise ValueError(f"{spec.name}: no backward pass for {spec.kind}")
    return d, grads


def save_weights(dirpath, cfg: NetworkConfig, states) -> None:
    """Persist weights as one tensor file pair per parameterized layer."""
    os.makedirs(dirpath, exist_ok=True)
    for spec, state in zip(cfg.layers, states):
        if state.weights is not None:
            write_tensor(os.path.join(dirpath, f"{spec.name}.w.jpt"), state.weights)
            write_tensor(os.path.join(dirpath, f"{spec.name}.b.jpt"), state.bias)


def load_weights(dirpath, cfg: NetworkConfig) -> list[LayerState]:
    """Load a weights directory written by save_weights, validating shapes."""
    states = []
    shape = cfg.input_shape
    for spec in cfg.layers:
        if spec.kind in (CONV, FC):
            w = read_tensor(os.path.join(dirpath, f"{spec.name}.w.jpt"))
            b = read_tensor(os.path.join(dirpath, f"{spec.name}.b.jpt"))
            if spec.kind == CONV:
                want = (spec.channels_out, shape[0], *spec.kernel)
            else:
                want = (spec.channels_out, int(np.prod(shape)))
            if tuple(w.shape) != want:
                raise ValueError(f"{spec.name}: weights shape {w.shape}, expected {want}")
            states.append(LayerState(weights=w, bias=b))
        else:
            states.append(LayerState())
        shape = output_shape(spec, shape)
    return states


def _conv(name, ch):
    return LayerSpec(CONV, name, channels_out=ch, kernel=(3, 3, 3), stride=(1, 1, 1), padding=(1, 1, 1))


def _pool(name, first=False):
    k = (1, 2, 2) if first else (2, 2, 2)
    return LayerSpec(POOL, name, kernel=k, stride=k, padding=(0, 0, 0))


def _trunk_layers(widths) -> list[LayerSpec]:
    w = list(widths)
    return [
        _conv("conv1a", w[0]), LayerSpec(RELU, "relu1a"), _pool("pool1", first=True),
        _conv("conv2a", w[1]), LayerSpec(RELU, "relu2a"), _pool("pool2"),
        _conv("conv3a", w[2]), LayerSpec(RELU, "relu3a"),
        _conv("conv3b", w[3]), LayerSpec(RELU, "relu3b"), _pool("pool3"),
        _conv("conv4a", w[4]), LayerSpec(RELU, "relu4a"),
        _conv("conv4b", w[5]), LayerSpec(RELU, "relu4b"), _pool("pool4"),
        _conv("conv5a", w[6]), LayerSpec(RELU, "relu5a"),
        _conv("conv5b", w[7]), LayerSpec(RELU, "relu5b"), _pool("pool5"),
    ]


def c3d_mini(in_channels: int = 1, n_classes: int = 3, clip_len: int = 16, frame_size: int = 32,
             widths=(8, 16, 32, 32, 32, 32, 32, 32), fc_width: int = 64) -> NetworkConfig:
    """Reduced-width C3D: same kernel/stride/padding pattern, trains on a CPU.

    Default input (1, 16, 32, 32) reaches conv5b at (32, 2, 2, 2).
    """
    layers = _trunk_layers(widths) + [
        LayerSpec(FC, "fc6", channels_out=fc_width), LayerSpec(RELU, "relu6"),
        LayerSpec(FC, "fc7", channels_out=n_classes),
        LayerSpec(SOFTMAX, "softmax"),
    ]
    return NetworkConfig(layers=layers, input_shape=(in_channels, clip_len, frame_size, frame_size))


def c3d_full(in_channels: int = 3, n_classes: int = 487) -> NetworkConfig:
    """Full-width C3D on (3, 16, 112, 112) input; conv5b comes out (512, 2, 7, 7).

    Used for shape and coordinate arithmetic; instantiating weights at this
    width is neither needed nor advisable on a desk machine.
    """
    layers = _trunk_layers((64, 128, 256, 256, 512, 512, 512, 512)) + [
        LayerSpec(FC, "fc6", channels_out=4096), LayerSpec(RELU, "relu6"),
        LayerSpec(FC, "fc7", channels_out=4096), LayerSpec(RELU, "relu7"),
        LayerSpec(FC, "fc8", channels_out=n_classes),
        LayerSpec(SOFTMAX, "softmax"),
    ]
    return NetworkConfig(layers=layers, input_shape=(in_channels, 16, 112, 112))
