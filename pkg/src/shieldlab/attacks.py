"""Targeted PGD and FGM against an ensemble surrogate.

The surrogate averages logits over every (model, JPEG quality) pair, with the
differentiable JPEG stand-in in the path, before the softmax. With an empty
quality list the attack sees raw pixels (the non-adaptive attacker).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .core import batch_perturbation_stats, project_linf
from .diffjpeg import diff_jpeg_forward, diff_jpeg_vjp
from .jpeg import check_quality

DEFAULT_EPS = 16 / 255
DEFAULT_ITERATIONS = 20
CHUNK = 100


@dataclass(frozen=True)
class AttackConfig:
    eps: float = DEFAULT_EPS
    alpha: float | None = None
    iterations: int = DEFAULT_ITERATIONS
    random_start: bool = True
    seed: int = 0
    adaptive: bool = True

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def step(self) -> float:
        """Step size; defaults to 2 * eps / iterations."""
        return self.alpha if self.alpha is not None else 2.0 * self.eps / self.iterations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = self.step
        return d


@dataclass(frozen=True)
class Surrogate:
    models: tuple
    qualities: tuple[int, ...] = ()
    precision: str = "float64"
    _cast: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ValueError("surrogate needs at least one model")
        if any(m.spec != models[0].spec for m in models):
            raise ValueError("surrogate models must share one spec")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "qualities", tuple(check_quality(q) for q in self.qualities))
        dtype = np.dtype(self.precision)
        object.__setattr__(self, "_cast", tuple(m.astype(dtype) if dtype != np.float64 else m for m in models))

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def paths(self, x: np.ndarray) -> list[tuple[int | None, np.ndarray]]:
        if not self.qualities:
            return [(None, x)]
        return [(q, diff_jpeg_forward(x, q)) for q in self.qualities]


def make_surrogate(models, qualities=(), adaptive: bool = True, precision: str = "float64") -> Surrogate:
    return Surrogate(tuple(models), tuple(qualities) if adaptive else (), precision)


def _pair_count(s: Surrogate) -> int:
    return len(s.models) * max(1, len(s.qualities))


def surrogate_logits(s: Surrogate, img) -> np.ndarray:
    """Mean of ``forward(model, JPEG~(x, q))`` over all model/quality pairs."""
    x = np.asarray(img, dtype=np.float64)
    total = None
    for _, xq in s.paths(x):
        xq = xq.astype(s.dtype, copy=False)
        for m in s._cast:
            out = nn.forward(m, xq).astype(np.float64)
            total = out if total is None else total + out
    return total / _pair_count(s)


def _grad_chunk(s: Surrogate, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    pairs = []
    total = None
    for q, xq in s.paths(x):
        xq = xq.astype(s.dtype, copy=False)
        for m in s._cast:
            logits, cache = nn.forward_with_cache(m, xq)
            pairs.append((q, m, xq, cache))
            logits = logits.astype(np.float64)
            total = logits if total is None else total + logits
    _, g = nn.cross_entropy_loss(total / len(pairs), target)
    g = (g / len(pairs)).astype(s.dtype)
    grad = np.zeros(x.shape)
    by_quality: dict = {}
    for q, m, xq, cache in pairs:
        _, dx = nn.backward(m, xq, g, need_param_grads=False, cache=cache)
        by_quality[q] = dx.astype(np.float64) + by_quality.get(q, 0.0)
    for q, dq in by_quality.items():
        grad += dq if q is None else diff_jpeg_vjp(x, q, dq)
    return grad


def surrogate_grad(s: Surrogate, img, target) -> np.ndarray:
    """Gradient w.r.t. the image of cross-entropy(surrogate_logits(img), target).

    For a batch each image's gradient is that of its own loss term.
    """
    x = np.asarray(img, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if len(t) != len(xb):
        raise ValueError("need one target per image")
    out = np.concatenate([_grad_chunk(s, xb[i : i + CHUNK], t[i : i + CHUNK]) for i in range(0, len(xb), CHUNK)])
    return out[0] if single else out


def least_likely_target(s: Surrogate, img):
    """Class with the smallest surrogate logit; ties go to the lowest index."""
    logits = surrogate_logits(s, img)
    target = np.argmin(logits, axis=-1)
    return int(target) if np.ndim(target) == 0 else target


def _random_start(img: np.ndarray, cfg: AttackConfig, indices) -> np.ndarray:
    noise = np.stack([np.random.default_rng([cfg.seed, int(i)]).uniform(-cfg.eps, cfg.eps, img.shape[1:]) for i in indices])
    return project_linf(img + noise, img, cfg.eps)


def _prepare(img, target, indices):
    x = np.asarray(img, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if len(t) != len(xb):
        raise ValueError("need one target per image")
    if np.any(t < 0) or np.any(t >= 10):
        raise ValueError("target class out of range")
    idx = np.arange(len(xb)) if indices is None else np.atleast_1d(np.asarray(indices))
    return xb, t, idx, single


def pgd_attack(s: Surrogate, img, target, cfg: AttackConfig, indices=None) -> np.ndarray:
    """Targeted L-inf PGD: ``x <- Proj(x - step * sign(grad))``.

    ``indices`` name each image for the random-start stream, so results do
    not depend on how a corpus is split into batches.
    """
    x0, t, idx, single = _prepare(img, target, indices)
    x = _random_start(x0, cfg, idx) if cfg.random_start else x0.copy()
    for _ in range(cfg.iterations):
        grad = surrogate_grad(s, x, t)
        x = project_linf(x - cfg.step * np.sign(grad), x0, cfg.eps)
    return x[0] if single else x


def fgm_attack(s: Surrogate, img, target, cfg: AttackConfig, indices=None) -> np.ndarray:
    """Single signed-gradient step of size eps from the clean image."""
    x0, t, _, single = _prepare(img, target, indices)
    grad = surrogate_grad(s, x0, t)
    x = project_linf(x0 - cfg.eps * np.sign(grad), x0, cfg.eps)
    return x[0] if single else x


def sidecar_records(adv, orig, targets, iterations: int, indices=None) -> list[dict]:
    linf, l2 = batch_perturbation_stats(adv, orig)
    idx = range(len(adv)) if indices is None else indices
    return [
        {"index": int(i), "target_class": int(t), "linf": float(a), "l2": float(b), "iterations": int(iterations)}
        for i, t, a, b in zip(idx, targets, linf, l2)
    ]


def write_sidecar(path, records: list[dict], config: dict | None = None) -> None:
    doc = {"config": config or {}, "images": records}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
