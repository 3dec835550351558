"""Toy encoder / refinement-decoder network in numpy with manual backprop.

Encoder stage s: 3x3 conv -> relu -> 2x2 average pool, ``base_channels * 2**s``
filters. Decoder, deepest stage first: nearest-neighbour upsample x2,
concatenate with the encoder skip of that resolution along channels, 3x3 conv
to ``15 * k`` maps, relu. A 1x1 conv and a sigmoid give 15 affordance maps.

All arithmetic is float64.
"""
from __future__ import annotations

import copy
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import NUM_AFFORDANCES, AffordanceTensor, RgbRaster, atomic_write_bytes
from .evalkit import loss_masked, loss_masked_grad

log = logging.getLogger(__name__)

CKPT_MAGIC = b"AFPW"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    k: int = 3
    depth: int = 3
    base_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.depth < 1 or self.base_channels < 1:
            raise ValueError("k, depth and base_channels must be >= 1")

    @property
    def refine_channels(self) -> int:
        return NUM_AFFORDANCES * self.k

    def encoder_channels(self, stage: int) -> int:
        return self.base_channels * 2**stage

    def check_input(self, height: int, width: int) -> None:
        f = 2**self.depth
        if height % f or width % f or height < f or width < f:
            raise ValueError(f"input {height}x{width} must be a positive multiple of {f} on both sides")


def layer_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    c_in = 3
    for s in range(config.depth):
        c_out = config.encoder_channels(s)
        shapes[f"enc{s}.w"] = (c_out, c_in, 3, 3)
        shapes[f"enc{s}.b"] = (c_out,)
        c_in = c_out
    deep = c_in
    for s in reversed(range(config.depth)):
        skip = config.encoder_channels(s)
        shapes[f"dec{s}.w"] = (config.refine_channels, deep + skip, 3, 3)
        shapes[f"dec{s}.b"] = (config.refine_channels,)
        deep = config.refine_channels
    shapes["head.w"] = (NUM_AFFORDANCES, config.refine_channels, 1, 1)
    shapes["head.b"] = (NUM_AFFORDANCES,)
    return shapes


def is_encoder(name: str) -> bool:
    return name.startswith("enc")


class ModelParams:
    """Named parameter arrays. ``version`` increases on every in-place update,
    which lets :func:`backward` reject caches from older weights."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        expected = layer_shapes(config)
        if list(arrays) != list(expected):
            raise ValueError(f"parameter names {list(arrays)} do not match {list(expected)}")
        for name, shape in expected.items():
            a = arrays[name]
            if a.shape != shape:
                raise ValueError(f"{name}: shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name}: non-finite values")
        self.config = config
        self.arrays = {n: np.asarray(a, dtype=np.float64) for n, a in arrays.items()}
        self.version = 0

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: a.copy() for n, a in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(a) for n, a in self.arrays.items()}


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    arrays = {}
    for name, shape in layer_shapes(config).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            rf = shape[2] * shape[3]
            limit = np.sqrt(6.0 / (shape[1] * rf + shape[0] * rf))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(config, arrays)


# --- layers -------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, h, w, kh, kw
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * h * w)


def conv_forward(x, w, b):
    n, _, h, wd = x.shape
    o, c, kh, kw = w.shape
    cols = _im2col(x, kh, kw)
    out = w.reshape(o, -1) @ cols + b[:, None]
    return out.reshape(o, n, h, wd).transpose(1, 0, 2, 3), cols


def conv_backward(g, x_shape, w, cols, need_dx=True):
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (g2 @ cols.T).reshape(w.shape)
    db = g2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    dcols = (w.reshape(o, -1).T @ g2).reshape(c, kh, kw, n, h, wd)
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, i, j].transpose(1, 0, 2, 3)
    return dxp[:, :, ph:ph + h, pw:pw + wd], dw, db


def avgpool_forward(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool_backward(g):
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def upsample_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample_backward(g):
    n, c, h, w = g.shape
    return g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- network ------------------------------------------------------------------


@dataclass
class Cache:
    params: ModelParams
    version: int
    x_shape: tuple
    enc: list = field(default_factory=list)  # (input shape, cols, pre-activation)
    dec: list = field(default_factory=list)  # (deep channels, input shape, cols, pre-activation)
    head_cols: np.ndarray | None = None
    head_in_shape: tuple | None = None
    out: np.ndarray | None = None

    def preactivations(self) -> list[np.ndarray]:
        return [e[2] for e in self.enc] + [d[3] for d in self.dec]


def _as_batch(images, config: ModelConfig) -> np.ndarray:
    if isinstance(images, RgbRaster):
        x = images.chw()[None]
    else:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected images shaped (N, 3, H, W), got {x.shape}")
    config.check_input(x.shape[2], x.shape[3])
    return x


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Forward pass on an (N, 3, H, W) batch; returns (N, 15, H, W) probabilities."""
    config = params.config
    x = _as_batch(x, config)
    cache = Cache(params, params.version, x.shape)
    skips = []
    a = x
    for s in range(config.depth):
        z, cols = conv_forward(a, params[f"enc{s}.w"], params[f"enc{s}.b"])
        cache.enc.append((a.shape, cols, z))
        r = np.maximum(z, 0.0)
        skips.append(r)
        a = avgpool_forward(r)
    d = a
    for s in reversed(range(config.depth)):
        u = upsample_forward(d)
        cat = np.concatenate([u, skips[s]], axis=1)
        z, cols = conv_forward(cat, params[f"dec{s}.w"], params[f"dec{s}.b"])
        cache.dec.append((u.shape[1], cat.shape, cols, z))
        d = np.maximum(z, 0.0)
    logits, cols = conv_forward(d, params["head.w"], params["head.b"])
    cache.head_cols, cache.head_in_shape = cols, d.shape
    cache.out = sigmoid(logits)
    return cache.out, cache


def forward(params: ModelParams, config: ModelConfig, image) -> tuple[AffordanceTensor, Cache]:
    """Single-image forward pass; the cache feeds :func:`backward`."""
    if config != params.config:
        raise ValueError("config does not match the parameters")
    out, cache = forward_batch(params, _as_batch(image, config))
    if out.shape[0] != 1:
        raise ValueError("forward takes one image; use forward_batch for batches")
    return AffordanceTensor(out[0]), cache


def backward(cache: Cache, grad_out: np.ndarray, need_input_grad: bool = False):
    """Gradients of a scalar loss given d loss / d output.

    Returns a dict of parameter gradients, plus the input gradient when
    ``need_input_grad`` is set.
    """
    params = cache.params
    if cache.version != params.version:
        raise ValueError("stale cache: parameters changed after the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 3:
        g = g[None]
    if g.shape != cache.out.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match output {cache.out.shape}")
    config = params.config
    grads: dict[str, np.ndarray] = {}

    y = cache.out
    gz = g * y * (1.0 - y)
    gd, grads["head.w"], grads["head.b"] = conv_backward(gz, cache.head_in_shape, params["head.w"], cache.head_cols)

    skip_grads = [None] * config.depth
    for (deep_c, cat_shape, cols, z), s in zip(reversed(cache.dec), range(config.depth)):
        gz = gd * (z > 0)
        gcat, grads[f"dec{s}.w"], grads[f"dec{s}.b"] = conv_backward(gz, cat_shape, params[f"dec{s}.w"], cols)
        skip_grads[s] = gcat[:, deep_c:]
        gd = upsample_backward(gcat[:, :deep_c])

    ga = gd
    for s in reversed(range(config.depth)):
        in_shape, cols, z = cache.enc[s]
        gr = avgpool_backward(ga) + skip_grads[s]
        gz = gr * (z > 0)
        need_dx = s > 0 or need_input_grad
        ga, grads[f"enc{s}.w"], grads[f"enc{s}.b"] = conv_backward(gz, in_shape, params[f"enc{s}.w"], cols, need_dx)

    ordered = {n: grads[n] for n in params.names()}
    if need_input_grad:
        return ordered, ga
    return ordered


# --- optimizer ----------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    mean_square: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, lr=1e-3, rho=0.9, eps=1e-8) -> "OptimizerState":
        return cls(lr, rho, eps, params.zeros_like())


def rmsprop_step(params: ModelParams, grads: dict, state: OptimizerState, frozen=frozenset()):
    """s <- rho s + (1 - rho) g^2; theta <- theta - lr g / (sqrt(s) + eps).

    Updates in place and returns (params, state); names in ``frozen`` are
    left untouched, including their running averages.
    """
    for name in params.names():
        if name in frozen:
            continue
        g = grads[name]
        s = state.mean_square.setdefault(name, np.zeros_like(g))
        if s.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} vs state {s.shape}")
        s *= state.rho
        s += (1.0 - state.rho) * g * g
        params.arrays[name] -= state.lr * g / (np.sqrt(s) + state.eps)
    params.version += 1
    return params, state


# --- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs_max: int = 50
    batch_size: int = 4
    patience: int = 5
    encoder_train: bool = True
    loss_mode: str = "masked"
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.batch_size < 1 or self.epochs_max < 1:
            raise ValueError("patience, batch_size and epochs_max must be >= 1")
        if self.loss_mode not in ("masked", "unmasked"):
            raise ValueError(f"loss_mode must be 'masked' or 'unmasked', got {self.loss_mode!r}")


class EarlyStopping:
    """Tracks the best validation loss and stops after ``patience`` epochs
    without a strict improvement."""

    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.best_state = None
        self.epoch = 0

    def update(self, val_loss: float, state=None) -> bool:
        self.epoch += 1
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.best_state = copy.deepcopy(state)
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


def _stack(samples):
    x = np.stack([s.image.chw() for s in samples])
    y = np.stack([np.asarray(s.target.values, dtype=np.float64) for s in samples])
    m = np.stack([s.mask.valid for s in samples]).astype(np.float64)
    return x, y, m


def batch_loss_and_grad(params: ModelParams, x, y, m, loss_mode: str = "masked"):
    """Pooled loss over a batch and its parameter gradients."""
    if loss_mode == "unmasked":
        m = np.ones_like(m)
    out, cache = forward_batch(params, x)
    loss = loss_masked(y, out, m)
    grads = backward(cache, loss_masked_grad(y, out, m))
    return loss, grads


def evaluate_loss(params: ModelParams, samples, loss_mode: str = "masked", batch_size: int = 8) -> float:
    """Loss pooled over every valid pixel of ``samples``."""
    total, weight = 0.0, 0.0
    for i in range(0, len(samples), batch_size):
        x, y, m = _stack(samples[i:i + batch_size])
        if loss_mode == "unmasked":
            m = np.ones_like(m)
        out, _ = forward_batch(params, x)
        n = m.sum()
        if n:
            total += loss_masked(y, out, m) * n
            weight += n
    return total / weight if weight else 0.0


def predict(params: ModelParams, samples, batch_size: int = 8) -> list[np.ndarray]:
    preds = []
    for i in range(0, len(samples), batch_size):
        x = np.stack([s.image.chw() for s in samples[i:i + batch_size]])
        out, _ = forward_batch(params, x)
        preds.extend(out)
    return preds


def train(model: ModelConfig, data, val, tc: TrainConfig, params: ModelParams | None = None,
          on_epoch=None):
    """Early-stopped RMSprop training; returns (best params, history).

    ``history`` holds one ``{"epoch", "train_loss", "val_loss"}`` dict per epoch.
    """
    data, val = list(data), list(val)
    if not data or not val:
        raise ValueError("training and validation sets must be nonempty")
    shapes = {s.shape for s in data + val}
    if len(shapes) != 1:
        raise ValueError(f"all samples must share one size, found {sorted(shapes)}")
    model.check_input(*shapes.pop())
    params = params or init_params(model)
    state = OptimizerState.for_params(params, tc.lr, tc.rho, tc.eps)
    frozen = frozenset() if tc.encoder_train else frozenset(n for n in params.names() if is_encoder(n))
    rng = np.random.default_rng(tc.seed)
    stopper = EarlyStopping(tc.patience)
    history = []
    for epoch in range(1, tc.epochs_max + 1):
        order = rng.permutation(len(data))
        total, weight = 0.0, 0.0
        for i in range(0, len(order), tc.batch_size):
            x, y, m = _stack([data[j] for j in order[i:i + tc.batch_size]])
            loss, grads = batch_loss_and_grad(params, x, y, m, tc.loss_mode)
            n = m.sum() if tc.loss_mode == "masked" else m.size
            total += loss * n
            weight += n
            rmsprop_step(params, grads, state, frozen)
        train_loss = total / weight if weight else 0.0
        val_loss = evaluate_loss(params, val, tc.loss_mode)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        stopper.update(val_loss, params.arrays)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(history[-1])
        if stopper.should_stop:
            break
    best = ModelParams(model, stopper.best_state) if stopper.best_state is not None else params
    return best, history


# --- checkpoints ----------------------------------------------------------------


def encode_checkpoint(params: ModelParams) -> bytes:
    """AFPW: magic | u8 version | u32 header length | JSON header | f64 LE payloads."""
    layers, offset = [], 0
    for name, a in params.arrays.items():
        layers.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.size * 8})
        offset += a.size * 8
    header = json.dumps({"config": asdict(params.config), "layers": layers}, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(CKPT_MAGIC + bytes([CKPT_VERSION]) + struct.pack("<I", len(header)) + header)
    for a in params.arrays.values():
        out.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return out.getvalue()


def decode_checkpoint(blob: bytes) -> ModelParams:
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {blob[:4]!r}")
    if blob[4] != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob[4]}")
    (hlen,) = struct.unpack("<I", blob[5:9])
    header = json.loads(blob[9:9 + hlen])
    base = 9 + hlen
    config = ModelConfig(**header["config"])
    arrays = {}
    for layer in header["layers"]:
        start = base + layer["offset"]
        raw = blob[start:start + layer["nbytes"]]
        if len(raw) != layer["nbytes"]:
            raise ValueError(f"checkpoint truncated in layer {layer['name']}")
        arrays[layer["name"]] = np.frombuffer(raw, dtype="<f8").reshape(layer["shape"]).astype(np.float64)
    return ModelParams(config, arrays)


def save_checkpoint(params: ModelParams, path) -> None:
    atomic_write_bytes(path, encode_checkpoint(params))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
