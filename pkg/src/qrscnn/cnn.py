"""A convolution-only 1D segmentation network written directly in numpy.

The stack is::

    conv(1 -> C, k) + ReLU              low-convolution block
    [conv(C -> C, k) + ReLU] * (depth-2) feature-extraction block
    conv(C -> 2, 1)                     scoring layer (logits)

Every convolution is zero-padded ("same"), so logits have the same length as
the input window. Parameters live in float64 arrays, but models produced by
:func:`init_model`, training and :func:`load_model` only hold values that are
exactly representable in binary32, which is the on-disk precision.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadMagic, DepthOutOfRange, MissingCache, ShapeMismatch, TruncatedFile

MIN_DEPTH = 2
MAX_DEPTH = 64
N_CLASSES = 2
MAGIC = b"QRSCNN1\x00"


@dataclass
class ModelConfig:
    depth: int = 2
    channels: int = 8
    kernel_len: int = 5
    fs: int = 100
    seed: int = 0

    def validate(self) -> None:
        if not MIN_DEPTH <= self.depth <= MAX_DEPTH:
            raise DepthOutOfRange(f"depth must lie in [{MIN_DEPTH}, {MAX_DEPTH}], got {self.depth}")
        if self.kernel_len < 1 or self.kernel_len % 2 == 0:
            raise ValueError(f"kernel_len must be a positive odd number, got {self.kernel_len}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")

    def layer_shapes(self) -> list[tuple[int, int, int]]:
        """``(out_ch, in_ch, kernel_len)`` for every layer, input to output."""
        c, k = self.channels, self.kernel_len
        return [(c, 1, k)] + [(c, c, k)] * (self.depth - 2) + [(N_CLASSES, c, 1)]


@dataclass
class ConvLayer:
    weights: np.ndarray
    bias: np.ndarray

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class CnnModel:
    config: ModelConfig
    layers: list[ConvLayer] = field(default_factory=list)

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, ...]``; arrays are shared, not copied."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "CnnModel":
        return copy.deepcopy(self)

    def round_to_float32(self) -> "CnnModel":
        """Round every parameter in place to the nearest binary32 value."""
        for p in self.parameters():
            p[...] = p.astype(np.float32)
        return self


@dataclass
class ForwardCache:
    """Per-layer tensors that :func:`backward` needs."""

    columns: list[np.ndarray]  # im2col view of each layer input, [B, L, C*k]
    pre_activations: list[np.ndarray]  # hidden-layer outputs before ReLU
    batched: bool


def init_model(config: ModelConfig) -> CnnModel:
    """He-style uniform init in ``±sqrt(6 / fan_in)``, zero biases."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    layers = []
    for out_ch, in_ch, k in config.layer_shapes():
        bound = np.sqrt(6.0 / (in_ch * k))
        w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k))
        layers.append(
            ConvLayer(
                weights=w.astype(np.float32).astype(np.float64),
                bias=np.zeros(out_ch),
            )
        )
    return CnnModel(config=config, layers=layers)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """[B, C, L] -> [B, L, C*k] with zero padding of (k-1)/2 on both ends."""
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)  # [B, C, L, k]
    b, c, length, _ = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, length, c * k)


def _conv_cols(cols: np.ndarray, layer: ConvLayer) -> np.ndarray:
    out_ch = layer.weights.shape[0]
    out = cols @ layer.weights.reshape(out_ch, -1).T  # [B, L, O]
    return out.transpose(0, 2, 1) + layer.bias[None, :, None]


def conv1d_forward(x, layer: ConvLayer) -> np.ndarray:
    """Same-padded cross-correlation of ``x`` ([C, L] or [B, C, L]) with ``layer``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != layer.weights.shape[1]:
        raise ShapeMismatch(
            f"input with shape {x.shape} does not fit layer with weights {layer.weights.shape}"
        )
    out = _conv_cols(_im2col(x, layer.weights.shape[2]), layer)
    return out[0] if squeeze else out


def forward(model: CnnModel, x, train: bool = False):
    """Logits for one window ``[L]`` -> ``[2, L]`` or a batch ``[B, L]`` -> ``[B, 2, L]``.

    With ``train=True`` returns ``(logits, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] == 0:
        raise ShapeMismatch(f"expected a [L] or [B, L] input, got shape {x.shape}")
    h = x.reshape(-1, 1, x.shape[-1])
    columns, pre = [], []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        cols = _im2col(h, layer.weights.shape[2])
        z = _conv_cols(cols, layer)
        if train:
            columns.append(cols)
        if i < last:
            if train:
                pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    logits = h if batched else h[0]
    if train:
        return logits, ForwardCache(columns, pre, batched)
    return logits


def softmax_cross_entropy(logits, mask, valid_len):
    """Mean two-class cross entropy and its gradient w.r.t. ``logits``.

    Each window contributes the mean over its first ``valid_len`` samples;
    windows in a batch are then averaged. Samples past ``valid_len`` receive a
    zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    batched = logits.ndim == 3
    z = logits if batched else logits[None]
    y = np.asarray(mask, dtype=np.float64).reshape(z.shape[0], -1)[:, : z.shape[2]]
    valid = np.broadcast_to(np.asarray(valid_len, dtype=np.int64), (z.shape[0],))
    if np.any(valid <= 0):
        raise ValueError("valid_len must be positive")
    if y.shape[1] < valid.max():
        raise ShapeMismatch("mask shorter than valid_len")
    n_batch, _, length = z.shape

    d = z[:, 1] - z[:, 0]
    # log p1 = -log(1 + e^-d), log p0 = -log(1 + e^d); logaddexp is max-shifted
    nll = np.where(y > 0.5, np.logaddexp(0.0, -d), np.logaddexp(0.0, d))
    in_range = np.arange(length)[None, :] < valid[:, None]
    per_window = np.where(in_range, nll, 0.0).sum(axis=1) / valid
    loss = float(per_window.mean())

    p1 = 0.5 * (1.0 + np.tanh(0.5 * d))
    g1 = np.where(in_range, (p1 - y) / (valid[:, None] * n_batch), 0.0)
    dlogits = np.stack([-g1, g1], axis=1)
    return loss, (dlogits if batched else dlogits[0])


def backward(model: CnnModel, cache: ForwardCache, dlogits) -> list[tuple[np.ndarray, np.ndarray]]:
    """Weight and bias gradients ``[(dW1, db1), ...]`` for a cached forward pass.

    Batch contributions are computed per window and summed over the batch
    axis, so identical windows contribute identical terms.
    """
    if cache is None or len(cache.columns) != len(model.layers):
        raise MissingCache("backward() needs the cache of forward(..., train=True)")
    g = np.asarray(dlogits, dtype=np.float64)
    if not cache.batched:
        g = g[None]
    grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        out_ch, in_ch, k = layer.weights.shape
        cols = cache.columns[i]
        if g.shape[:2] != (cols.shape[0], out_ch) or g.shape[2] != cols.shape[1]:
            raise ShapeMismatch(f"gradient shape {g.shape} does not match layer {i}")
        dw = np.matmul(g, cols).sum(axis=0).reshape(out_ch, in_ch, k)
        db = g.sum(axis=2).sum(axis=0)
        grads.append((dw, db))
        if i == 0:
            break
        # input gradient: correlate the padded output gradient with the flipped kernel
        flipped = layer.weights[:, :, ::-1].transpose(0, 2, 1).reshape(out_ch * k, in_ch)
        dx = (_im2col(g, k) @ flipped).transpose(0, 2, 1)
        g = dx * (cache.pre_activations[i - 1] > 0)
    grads.reverse()
    return grads


def predict_logits_mask(logits) -> np.ndarray:
    """Per-sample argmax over the class axis; exact ties go to class 0."""
    logits = np.asarray(logits)
    return (logits[..., 1, :] > logits[..., 0, :]).astype(np.uint8)


def predict_mask(model: CnnModel, segment) -> np.ndarray:
    """Binary QRS mask for one window (array or :class:`Segment`) or a batch."""
    x = getattr(segment, "signal", segment)
    return predict_logits_mask(forward(model, x))


def count_params(model_or_config) -> int:
    cfg = getattr(model_or_config, "config", model_or_config)
    return sum(o * i * k + o for o, i, k in cfg.layer_shapes())


def count_macs(model_or_config, input_len: int) -> int:
    cfg = getattr(model_or_config, "config", model_or_config)
    return sum(input_len * o * i * k for o, i, k in cfg.layer_shapes())


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def save_model(model: CnnModel, path) -> Path:
    """Write magic, a length-prefixed JSON header, then LE binary32 parameters."""
    header = {
        "config": asdict(model.config),
        "layers": [
            {"weights": list(layer.weights.shape), "bias": list(layer.bias.shape)}
            for layer in model.layers
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join(p.astype("<f4").tobytes() for p in model.parameters())
    path = Path(path)
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + body)
    return path


def load_model(path) -> CnnModel:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a model file")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise TruncatedFile(f"{path}: missing header length")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + hlen:
        raise TruncatedFile(f"{path}: header truncated")
    try:
        header = json.loads(raw[pos : pos + hlen])
    except ValueError as exc:
        raise ShapeMismatch(f"{path}: unreadable header ({exc})") from None
    pos += hlen

    config = ModelConfig(**header["config"])
    config.validate()
    shapes = [(tuple(e["weights"]), tuple(e["bias"])) for e in header["layers"]]
    expected = [(s, (s[0],)) for s in config.layer_shapes()]
    if shapes != expected:
        raise ShapeMismatch(
            f"{path}: header lists {len(shapes)} layers {shapes}, "
            f"config (depth {config.depth}) implies {expected}"
        )
    layers = []
    for wshape, bshape in shapes:
        arrays = []
        for shape in (wshape, bshape):
            n = int(np.prod(shape))
            if len(raw) < pos + 4 * n:
                raise TruncatedFile(f"{path}: parameter data truncated")
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos)
            arrays.append(arr.astype(np.float64).reshape(shape))
            pos += 4 * n
        layers.append(ConvLayer(*arrays))
    if pos != len(raw):
        raise ShapeMismatch(f"{path}: {len(raw) - pos} unexpected trailing bytes")
    return CnnModel(config=config, layers=layers)
