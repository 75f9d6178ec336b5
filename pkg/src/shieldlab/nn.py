"""A small convolutional classifier written directly in numpy.

Architecture (fixed)::

    conv3x3(8, same) -> relu -> maxpool2 -> conv3x3(16, same) -> relu -> maxpool2 -> dense(10)

Forward and reverse passes are explicit so the same code serves training
(parameter gradients) and attacks (input gradients).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .core import ShapeError
from .jpeg import jpeg_round_trip

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")
WEIGHT_NAMES = ("conv1_w", "conv2_w", "dense_w")
LINEAGES = ("base", "derivative", "originative")
DERIVATIVE_LR_FACTOR = 0.2
CHECKPOINT_MAGIC = b"SHLDMDL1"


@dataclass(frozen=True)
class ModelSpec:
    input_size: int = 32
    conv1_filters: int = 8
    conv2_filters: int = 16
    kernel: int = 3
    class_count: int = 10

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        flat = self.conv2_filters * (self.input_size // 4) ** 2
        return {
            "conv1_w": (self.conv1_filters, 1, k, k),
            "conv1_b": (self.conv1_filters,),
            "conv2_w": (self.conv2_filters, self.conv1_filters, k, k),
            "conv2_b": (self.conv2_filters,),
            "dense_w": (self.class_count, flat),
            "dense_b": (self.class_count,),
        }


DEFAULT_SPEC = ModelSpec()


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray]
    spec: ModelSpec = DEFAULT_SPEC
    lineage: str = "base"
    train_quality: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.lineage not in LINEAGES:
            raise ValueError(f"unknown lineage {self.lineage!r}")
        shapes = self.spec.param_shapes()
        if set(self.arrays) != set(shapes):
            raise ShapeError(f"parameter names {sorted(self.arrays)} do not match the model spec")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")

    def copy(self, **changes) -> "ModelParams":
        arrays = {k: v.copy() for k, v in self.arrays.items()}
        return replace(self, arrays=arrays, **changes)

    def astype(self, dtype) -> "ModelParams":
        """Copy with every array cast to ``dtype``; inference then runs in that precision."""
        return replace(self, arrays={k: v.astype(dtype) for k, v in self.arrays.items()})


def init_params(seed: int, spec: ModelSpec = DEFAULT_SPEC, lineage: str = "base") -> ModelParams:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return ModelParams(arrays=arrays, spec=spec, lineage=lineage, seed=seed)


def zero_params(spec: ModelSpec = DEFAULT_SPEC) -> ModelParams:
    return ModelParams({n: np.zeros(s) for n, s in spec.param_shapes().items()}, spec=spec)


# ---------------------------------------------------------------------------
# layers
#
# Internally activations are channels-last (N, H, W, C); public weights keep the
# conventional (F, C, k, k) layout and the dense layer flattens in (C, H, W) order.


def _patches(x: np.ndarray, k: int) -> np.ndarray:
    """(N, H, W, C) -> (N, H, W, k*k*C) patches of a stride-1 same convolution."""
    _, h, w, _ = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    return np.concatenate([xp[:, i : i + h, j : j + w, :] for i in range(k) for j in range(k)], axis=-1)


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    # (F, C, k, k) -> (k*k*C, F), matching the patch layout
    return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])


def _conv_forward(x, w, b):
    cols = _patches(x, w.shape[-1])
    return cols @ _kernel_matrix(w) + b, cols


def _conv_param_grads(dout, w, cols):
    f, c, k, _ = w.shape
    dmat = dout.reshape(-1, f)
    dw = (cols.reshape(-1, cols.shape[-1]).T @ dmat).reshape(k, k, c, f).transpose(3, 2, 0, 1)
    return dw, dmat.sum(axis=0)


def _conv_input_grad(dout, w):
    f, c, k, _ = w.shape
    n, h, wd, _ = dout.shape
    dcols = dout @ _kernel_matrix(w).T  # N, H, W, k*k*C
    p = k // 2
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            s = (i * k + j) * c
            dxp[:, i : i + h, j : j + wd, :] += dcols[..., s : s + c]
    return dxp[:, p : p + h, p : p + wd, :]


def _quads(x):
    return x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]


def _pool_forward(x):
    q = _quads(x)
    return np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))


def _pool_backward(dout, x, out):
    """Route each window's gradient to its first maximal entry."""
    dx = np.zeros(x.shape, dtype=dout.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    for src, dst in zip(_quads(x), _quads(dx)):
        m = (src == out) & ~taken
        taken |= m
        dst[...] = dout * m
    return dx


def _dense_matrix(params: ModelParams, hw: int) -> np.ndarray:
    # (classes, C*H*W) in (C, H, W) order -> (H*W*C, classes) for channels-last features
    a = params.arrays["dense_w"]
    c = params.spec.conv2_filters
    return a.reshape(len(a), c, hw, hw).transpose(2, 3, 1, 0).reshape(-1, len(a))


def _as_batch(params: ModelParams, img) -> tuple[np.ndarray, bool]:
    x = np.asarray(img, dtype=params.arrays["conv1_w"].dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    s = params.spec.input_size
    if x.ndim != 3 or x.shape[1:] != (s, s):
        raise ShapeError(f"model expects ({s}, {s}) images, got shape {np.shape(img)}")
    return x, single


def _forward_cached(params: ModelParams, x: np.ndarray):
    a = params.arrays
    z1, cols1 = _conv_forward(x[..., None], a["conv1_w"], a["conv1_b"])
    r1 = np.maximum(z1, 0.0)
    p1 = _pool_forward(r1)
    z2, cols2 = _conv_forward(p1, a["conv2_w"], a["conv2_b"])
    r2 = np.maximum(z2, 0.0)
    p2 = _pool_forward(r2)
    dense = _dense_matrix(params, p2.shape[1])
    flat = p2.reshape(len(x), -1)
    logits = flat @ dense + a["dense_b"]
    return logits, (cols1, r1, p1, cols2, r2, p2, flat, dense)


def forward(params: ModelParams, img) -> np.ndarray:
    """Logits for one image ``(H, W)`` -> ``(10,)`` or a batch -> ``(N, 10)``."""
    x, single = _as_batch(params, img)
    logits, _ = _forward_cached(params, x)
    return logits[0] if single else logits


def forward_with_cache(params: ModelParams, img):
    """Logits plus the activations :func:`backward` needs, to avoid a second forward pass."""
    x, single = _as_batch(params, img)
    logits, cache = _forward_cached(params, x)
    return (logits[0] if single else logits), cache


def backward(
    params: ModelParams,
    img,
    logit_grad,
    *,
    need_param_grads: bool = True,
    need_input_grad: bool = True,
    cache=None,
):
    """Reverse pass for the cotangent ``logit_grad`` on the logits.

    Returns ``(param_grads, input_grad)``. Parameter gradients are summed over
    the batch. With ``need_param_grads=False`` only the input gradient is
    computed and ``param_grads`` is None; likewise ``need_input_grad``.
    """
    x, single = _as_batch(params, img)
    g = np.asarray(logit_grad, dtype=x.dtype)
    if single:
        g = g[None]
    if g.shape != (len(x), params.spec.class_count):
        raise ShapeError(f"logit cotangent shape {np.shape(logit_grad)} does not match the batch")
    a = params.arrays
    if cache is None:
        _, cache = _forward_cached(params, x)
    cols1, r1, p1, cols2, r2, p2, flat, dense = cache

    dp2 = (g @ dense.T).reshape(p2.shape)
    dz2 = _pool_backward(dp2, r2, p2) * (r2 > 0)
    dp1 = _conv_input_grad(dz2, a["conv2_w"])
    dz1 = _pool_backward(dp1, r1, p1) * (r1 > 0)
    dx = None
    if need_input_grad:
        dx = _conv_input_grad(dz1, a["conv1_w"])[..., 0]
        if single:
            dx = dx[0]
    if not need_param_grads:
        return None, dx
    dw1, db1 = _conv_param_grads(dz1, a["conv1_w"], cols1)
    dw2, db2 = _conv_param_grads(dz2, a["conv2_w"], cols2)
    hw = p2.shape[1]
    c = params.spec.conv2_filters
    dense_grad = (g.T @ flat).reshape(g.shape[1], hw, hw, c).transpose(0, 3, 1, 2).reshape(a["dense_w"].shape)
    grads = {
        "conv1_w": dw1,
        "conv1_b": db1,
        "conv2_w": dw2,
        "conv2_b": db2,
        "dense_w": dense_grad,
        "dense_b": g.sum(axis=0),
    }
    return grads, dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits, target):
    """Softmax cross-entropy and its gradient on the logits.

    Works for one logit vector with an integer target, or a batch ``(N, C)``
    with a length-N target array (per-sample losses are returned).
    """
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target)
    c = logits.shape[-1]
    if np.any(t < 0) or np.any(t >= c):
        raise ValueError(f"target class out of range [0, {c - 1}]: {target}")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    onehot = np.eye(c)[t]
    loss = -(log_p * onehot).sum(axis=-1)
    grad = np.exp(log_p) - onehot
    if logits.ndim == 1:
        return float(loss), grad
    return loss, grad


def predict(params: ModelParams, images, batch_size: int = 500) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    out = [forward(params, images[i : i + batch_size]).argmax(axis=1) for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def accuracy(params: ModelParams, images, labels) -> float:
    return float(np.mean(predict(params, images) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    jpeg_quality: int | None = None
    init: str = "random"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.init not in ("random", "from_params"):
            raise ValueError(f"init must be 'random' or 'from_params', got {self.init!r}")


def train(cfg: TrainConfig, images, labels, init: ModelParams | None = None, spec: ModelSpec = DEFAULT_SPEC) -> ModelParams:
    """Mini-batch SGD with momentum on mean cross-entropy.

    Training images are passed through ``jpeg_round_trip`` at
    ``cfg.jpeg_quality`` (the codec is deterministic, so this is done once).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("training set is empty")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    if cfg.init == "from_params":
        if init is None:
            raise ValueError("init='from_params' needs starting parameters")
        params = init.copy(lineage="derivative")
    else:
        lineage = "base" if cfg.jpeg_quality is None else "originative"
        params = init_params(cfg.seed, init.spec if init else spec, lineage=lineage)
    params.train_quality = cfg.jpeg_quality
    params.seed = cfg.seed

    if cfg.jpeg_quality is not None:
        images = jpeg_round_trip(images, cfg.jpeg_quality)
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    velocity = {n: np.zeros_like(v) for n, v in params.arrays.items()}
    for _ in range(cfg.epochs):
        order = rng.permutation(len(images))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = forward_with_cache(params, images[idx])
            _, g = cross_entropy_loss(logits, labels[idx])
            grads, _ = backward(params, images[idx], g / len(idx), need_input_grad=False, cache=cache)
            for n in PARAM_NAMES:
                velocity[n] = cfg.momentum * velocity[n] - cfg.learning_rate * grads[n]
                params.arrays[n] = params.arrays[n] + velocity[n]
    return params


def derivative_config(cfg: TrainConfig, quality: int, seed: int | None = None) -> TrainConfig:
    """Fine-tuning config for a derivative model: warm start, 5x smaller step."""
    return replace(
        cfg,
        learning_rate=cfg.learning_rate * DERIVATIVE_LR_FACTOR,
        jpeg_quality=quality,
        init="from_params",
        seed=cfg.seed if seed is None else seed,
    )


# ---------------------------------------------------------------------------
# weight correlation


def weight_cosine_similarity(a: ModelParams, b: ModelParams) -> float:
    """Cosine between per-layer unit-normalized, concatenated weight vectors (biases excluded)."""
    if a.spec != b.spec:
        raise ShapeError("models have different specs")
    va, vb = [], []
    for name in WEIGHT_NAMES:
        for params, acc in ((a, va), (b, vb)):
            w = params.arrays[name].ravel()
            norm = np.linalg.norm(w)
            if norm == 0:
                raise ValueError(f"layer {name} has zero norm")
            acc.append(w / norm)
    va, vb = np.concatenate(va), np.concatenate(vb)
    cos = float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))
    return min(1.0, max(-1.0, cos))


def mean_pairwise_cosine(models: list[ModelParams]) -> float:
    sims = [weight_cosine_similarity(models[i], models[j]) for i in range(len(models)) for j in range(i + 1, len(models))]
    return float(np.mean(sims))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path) -> None:
    header = {
        "spec": asdict(params.spec),
        "lineage": params.lineage,
        "train_quality": params.train_quality,
        "seed": params.seed,
        "params": [[n, list(params.spec.param_shapes()[n])] for n in PARAM_NAMES],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for n in PARAM_NAMES:
        buf.write(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header") from exc
    spec = ModelSpec(**header["spec"])
    offset = 12 + hlen
    arrays = {}
    for n, shape in spec.param_shapes().items():
        count = int(np.prod(shape))
        chunk = data[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError(f"{path}: truncated parameter data")
        arrays[n] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * count
    return ModelParams(
        arrays={n: arrays[n] for n in PARAM_NAMES},
        spec=spec,
        lineage=header["lineage"],
        train_quality=header["train_quality"],
        seed=header["seed"],
    )
