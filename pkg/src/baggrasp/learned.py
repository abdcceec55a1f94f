"""Two-branch convolutional grasp regressor with hand-written backprop.

Each branch (RGB, depth) runs two stride-2 3x3 convolutions with relu and
flattens to a 1920-dim embedding; the branch embeddings are added and feed
two linear heads, one for the target pixel (2 outputs) and one for the
grasp angle (1 output). Training minimizes the mean absolute error of the
three outputs with plain SGD.

The network operates on normalized quantities throughout: inputs scaled to
roughly [0, 1], pixel labels divided by (width-1, height-1), angles divided
by pi/2. `predict` converts raw head outputs back to pixels/radians.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import image_io
from .image_io import DepthImage, RgbImage

IN_H, IN_W = 36, 64
DEPTH_SCALE = 1000.0  # raw depth (mm) -> meters for network input

_MAGIC = b"BAGNET01"


@dataclass
class LabeledScene:
    """A 36x64 training sample: rasters plus the labeled grasp pixel/angle."""

    rgb: RgbImage
    depth: DepthImage
    label_px: tuple
    label_theta: float

    def __post_init__(self):
        for img in (self.rgb, self.depth):
            if (img.height, img.width) != (IN_H, IN_W):
                raise ValueError(f"scene rasters must be {IN_H}x{IN_W}")

    def tensors(self) -> tuple[np.ndarray, np.ndarray]:
        return image_tensors(self.rgb, self.depth)

    def normalized_label(self) -> np.ndarray:
        x, y = self.label_px
        return np.array([x / (IN_W - 1), y / (IN_H - 1),
                         self.label_theta / (math.pi / 2)])


def image_tensors(rgb: RgbImage, depth: DepthImage) -> tuple[np.ndarray, np.ndarray]:
    """Network inputs: RGB scaled to [0, 1] (3,h,w), depth in meters (1,h,w)."""
    r = rgb.pixels.astype(float).transpose(2, 0, 1) / 255.0
    d = depth.pixels.astype(float)[None, :, :] / DEPTH_SCALE
    return r, d


@dataclass
class ModelParams:
    rgb_k1: np.ndarray
    rgb_b1: np.ndarray
    rgb_k2: np.ndarray
    rgb_b2: np.ndarray
    dep_k1: np.ndarray
    dep_b1: np.ndarray
    dep_k2: np.ndarray
    dep_b2: np.ndarray
    pos_w: np.ndarray
    pos_b: np.ndarray
    theta_w: np.ndarray
    theta_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> "ModelParams":
        return ModelParams(*[a.copy() for a in self.arrays()])


# (out_ch, in_ch, kh, kw) per conv; embedding dim follows from two stride-2
# valid 3x3 convolutions over a 36x64 input: 17x31 then 8x15 maps.
_SHAPES = {
    "rgb_k1": (8, 3, 3, 3), "rgb_b1": (8,),
    "rgb_k2": (16, 8, 3, 3), "rgb_b2": (16,),
    "dep_k1": (8, 1, 3, 3), "dep_b1": (8,),
    "dep_k2": (16, 8, 3, 3), "dep_b2": (16,),
    "pos_w": (2, 1920), "pos_b": (2,),
    "theta_w": (1, 1920), "theta_b": (1,),
}
EMBED_DIM = 16 * 8 * 15
STRIDE = 2


def init_params(seed: int) -> ModelParams:
    """Fan-in-scaled normal kernels/weights, zero biases, deterministic."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _SHAPES.items():
        if name.endswith("_b1") or name.endswith("_b2") or name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    return ModelParams(**arrays)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    n, c, h, w = x.shape
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, (n, c, out_h, out_w, kh, kw),
        (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n, out_h * out_w, c * kh * kw), out_h, out_w


def _conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                  stride: int):
    n = x.shape[0]
    oc, ic, kh, kw = kernel.shape
    if x.shape[1] != ic:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {ic}")
    cols, out_h, out_w = _im2col(x, kh, kw, stride)
    flat = cols @ kernel.reshape(oc, -1).T + bias
    out = flat.transpose(0, 2, 1).reshape(n, oc, out_h, out_w)
    return out, cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, x_shape,
                   kernel: np.ndarray, stride: int):
    n, oc, out_h, out_w = dout.shape
    _, ic, kh, kw = kernel.shape
    dflat = dout.reshape(n, oc, out_h * out_w).transpose(0, 2, 1)
    dkernel = np.einsum("npo,npk->ok", dflat, cols).reshape(kernel.shape)
    dbias = dflat.sum(axis=(0, 1))
    dcols = dflat @ kernel.reshape(oc, -1)
    dx = np.zeros(x_shape)
    dcols = dcols.reshape(n, out_h, out_w, ic, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride] \
                += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dkernel, dbias


def conv2d_forward(x, kernel, bias, stride: int = 1) -> np.ndarray:
    """Valid (no padding) strided cross-correlation.

    x is (channels, h, w) or (batch, channels, h, w); output spatial dims
    are floor((in - k)/stride) + 1.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    out, _ = _conv_forward(x, np.asarray(kernel, dtype=float),
                           np.asarray(bias, dtype=float), stride)
    return out[0] if single else out


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def linear_forward(x, weight, bias) -> np.ndarray:
    """y = W x + b; x may be (features,) or (batch, features)."""
    x = np.asarray(x, dtype=float)
    return x @ np.asarray(weight, dtype=float).T + np.asarray(bias, dtype=float)


def _branch_forward(x: np.ndarray, k1, b1, k2, b2):
    h1, cols1 = _conv_forward(x, k1, b1, STRIDE)
    a1 = np.maximum(h1, 0.0)
    h2, cols2 = _conv_forward(a1, k2, b2, STRIDE)
    a2 = np.maximum(h2, 0.0)
    emb = a2.reshape(x.shape[0], -1)
    cache = (x.shape, cols1, h1, a1.shape, cols2, h2, a2.shape)
    return emb, cache


def _branch_backward(demb: np.ndarray, cache, k1, k2):
    x_shape, cols1, h1, a1_shape, cols2, h2, a2_shape = cache
    da2 = demb.reshape(a2_shape)
    dh2 = da2 * (h2 > 0.0)
    da1, dk2, db2 = _conv_backward(dh2, cols2, a1_shape, k2, STRIDE)
    dh1 = da1 * (h1 > 0.0)
    _, dk1, db1 = _conv_backward(dh1, cols1, x_shape, k1, STRIDE)
    return dk1, db1, dk2, db2


def forward_batch(params: ModelParams, rgb: np.ndarray, dep: np.ndarray):
    """Batched forward pass; returns (pos (n,2), theta (n,1), cache)."""
    if rgb.shape[1:] != (3, IN_H, IN_W) or dep.shape[1:] != (1, IN_H, IN_W):
        raise ValueError(f"inputs must be (n,3,{IN_H},{IN_W}) and (n,1,{IN_H},{IN_W})")
    emb_rgb, cache_rgb = _branch_forward(rgb, params.rgb_k1, params.rgb_b1,
                                         params.rgb_k2, params.rgb_b2)
    emb_dep, cache_dep = _branch_forward(dep, params.dep_k1, params.dep_b1,
                                         params.dep_k2, params.dep_b2)
    emb = emb_rgb + emb_dep
    pos = emb @ params.pos_w.T + params.pos_b
    theta = emb @ params.theta_w.T + params.theta_b
    return pos, theta, (cache_rgb, cache_dep, emb)


def model_forward(params: ModelParams, rgb, dep):
    """Single-scene forward pass: ((2,) position, (1,) angle) raw outputs.

    Outputs are in the network's normalized units; see `predict` for pixels
    and radians.
    """
    rgb = np.asarray(rgb, dtype=float)
    dep = np.asarray(dep, dtype=float)
    pos, theta, _ = forward_batch(params, rgb[None], dep[None])
    return pos[0], theta[0]


def l1_loss(pred: np.ndarray, label: np.ndarray):
    """Mean absolute error and its subgradient w.r.t. pred (0 at equality)."""
    pred = np.asarray(pred, dtype=float)
    label = np.asarray(label, dtype=float)
    diff = pred - label
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def backward(params: ModelParams, rgb: np.ndarray, dep: np.ndarray,
             labels: np.ndarray):
    """Loss and analytic gradients for a batch.

    labels is (n, 3) in normalized units: (x, y, theta). Gradients come back
    as a ModelParams of matching shapes.
    """
    pos, theta, (cache_rgb, cache_dep, emb) = forward_batch(params, rgb, dep)
    pred = np.concatenate([pos, theta], axis=1)
    loss, dpred = l1_loss(pred, labels)
    dpos, dtheta = dpred[:, :2], dpred[:, 2:]
    dpos_w = dpos.T @ emb
    dpos_b = dpos.sum(axis=0)
    dtheta_w = dtheta.T @ emb
    dtheta_b = dtheta.sum(axis=0)
    demb = dpos @ params.pos_w + dtheta @ params.theta_w
    grads_rgb = _branch_backward(demb, cache_rgb, params.rgb_k1, params.rgb_k2)
    grads_dep = _branch_backward(demb, cache_dep, params.dep_k1, params.dep_k2)
    grads = ModelParams(*grads_rgb, *grads_dep, dpos_w, dpos_b, dtheta_w, dtheta_b)
    return loss, grads


def batch_tensors(scenes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rgb = np.stack([s.tensors()[0] for s in scenes])
    dep = np.stack([s.tensors()[1] for s in scenes])
    labels = np.stack([s.normalized_label() for s in scenes])
    return rgb, dep, labels


def train(dataset, epochs: int, lr: float = 1e-3, seed: int = 0,
          batch_size: int = 4):
    """Plain SGD over shuffled mini-batches; deterministic given the seed.

    Returns (params, per-epoch mean losses).
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    params = init_params(seed)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for begin in range(0, len(dataset), batch_size):
            batch = [dataset[i] for i in order[begin:begin + batch_size]]
            rgb, dep, labels = batch_tensors(batch)
            loss, grads = backward(params, rgb, dep, labels)
            for name in _SHAPES:
                getattr(params, name)[...] -= lr * getattr(grads, name)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    return params, losses


def training_loss(params: ModelParams, dataset) -> float:
    rgb, dep, labels = batch_tensors(dataset)
    pos, theta, _ = forward_batch(params, rgb, dep)
    return l1_loss(np.concatenate([pos, theta], axis=1), labels)[0]


def save_params(params: ModelParams, path) -> None:
    """Flat binary dump: magic, array count, per-array dims, float64 LE data."""
    chunks = [_MAGIC, struct.pack("<I", len(_SHAPES))]
    for arr in params.arrays():
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: bad params-file magic")
    pos = 8
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if count != len(_SHAPES):
            raise ValueError(f"{path}: expected {len(_SHAPES)} arrays, got {count}")
        arrays = []
        for name, shape in _SHAPES.items():
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            if dims != shape:
                raise ValueError(f"{path}: {name} has shape {dims}, expected {shape}")
            n = int(np.prod(shape))
            if pos + 8 * n > len(data):
                raise ValueError(f"{path}: truncated params file")
            arrays.append(np.frombuffer(data, "<f8", n, pos).reshape(shape).copy())
            pos += 8 * n
    except struct.error as err:
        raise ValueError(f"{path}: truncated params file") from err
    return ModelParams(*arrays)


def preprocess(rgb: RgbImage, depth: DepthImage):
    """Full-frame pair -> network tensors plus the 36x64 -> full-frame
    pixel map (crop offsets and per-axis scales)."""
    ox, oy, cw, ch = image_io.crop_window(rgb)
    rgb_small = image_io.resize_bilinear(image_io.crop_center_quarter(rgb), IN_W, IN_H)
    dep_small = image_io.resize_bilinear(image_io.crop_center_quarter(depth), IN_W, IN_H)
    sx, sy = cw / IN_W, ch / IN_H
    return rgb_small, dep_small, (ox, oy, sx, sy)


def net_to_full_px(px, py, frame) -> tuple[float, float]:
    ox, oy, sx, sy = frame
    return ox + (px + 0.5) * sx - 0.5, oy + (py + 0.5) * sy - 0.5


def full_to_net_px(px, py, frame) -> tuple[float, float]:
    ox, oy, sx, sy = frame
    return (px - ox + 0.5) / sx - 0.5, (py - oy + 0.5) / sy - 0.5


def predict(params: ModelParams, rgb: RgbImage, depth: DepthImage):
    """Predicted grasp for a full-frame pair: ((x, y) full-frame pixels, theta).

    theta is wrapped into (-pi/2, pi/2].
    """
    from .classical import wrap_half_pi

    rgb_small, dep_small, frame = preprocess(rgb, depth)
    t_rgb, t_dep = image_tensors(rgb_small, dep_small)
    pos, theta = model_forward(params, t_rgb, t_dep)
    px = float(pos[0]) * (IN_W - 1)
    py = float(pos[1]) * (IN_H - 1)
    full = net_to_full_px(px, py, frame)
    return full, wrap_half_pi(float(theta[0]) * (math.pi / 2))


def load_dataset(directory) -> list[LabeledScene]:
    """Load scene_####.ppm/.pgm pairs listed in labels.csv (id,px,py,theta).

    Full-frame scenes are center-cropped and resized to 36x64; labels are
    mapped into the small frame, and rows whose label falls outside the
    crop are skipped.
    """
    directory = Path(directory)
    scenes = []
    with open(directory / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["id"])
            rgb = image_io.load_ppm(directory / f"scene_{idx:04d}.ppm")
            depth = image_io.load_pgm(directory / f"scene_{idx:04d}.pgm")
            rgb_small, dep_small, frame = preprocess(rgb, depth)
            px, py = full_to_net_px(float(row["px"]), float(row["py"]), frame)
            if not (-0.5 <= px <= IN_W - 0.5 and -0.5 <= py <= IN_H - 0.5):
                continue
            scenes.append(LabeledScene(rgb_small, dep_small, (px, py),
                                       float(row["theta"])))
    return scenes
