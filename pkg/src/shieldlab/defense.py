"""The defended inference pipeline: SLQ, then a majority vote of JPEG-trained models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .slq import SlqConfig, block_choices, stitch
from .jpeg import jpeg_round_trip
from .core import BLOCK, pad_amounts


def derive_call_seed(ensemble_seed: int, index: int) -> int:
    """Per-image SLQ seed derived from the ensemble seed and the image index."""
    state = np.random.SeedSequence([ensemble_seed, 0x5EED, int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass
class ShieldEnsemble:
    models: list
    slq: SlqConfig = field(default_factory=SlqConfig)

    def __post_init__(self):
        self.models = list(self.models)
        if not self.models:
            raise ValueError("ensemble needs at least one model")
        if any(m.spec != self.models[0].spec for m in self.models):
            raise ValueError("ensemble models must share one spec")

    @property
    def seed(self) -> int:
        return self.slq.seed


def slq_batch(images: np.ndarray, qualities, seeds) -> tuple[np.ndarray, np.ndarray]:
    """SLQ for a batch, one seed per image. Returns mosaics and choice maps."""
    images = np.asarray(images, dtype=np.float64)
    candidates = np.stack([jpeg_round_trip(images, q) for q in qualities], axis=1)  # N, K, H, W
    n, _, h, w = candidates.shape
    pb, pr = pad_amounts(h, w)
    by, bx = (h + pb) // BLOCK, (w + pr) // BLOCK
    out = np.empty_like(images)
    maps = np.empty((n, by, bx), dtype=np.int64)
    for i in range(n):
        maps[i] = block_choices(seeds[i], by, bx, len(qualities))
        out[i] = stitch(candidates[i], maps[i])
    return out, maps


def vote(logits: np.ndarray, class_count: int = 10) -> tuple[int, np.ndarray]:
    """Majority vote over per-model logits ``(M, C)``.

    Ties go to the tied class with the largest summed softmax probability,
    then to the lowest class index.
    """
    preds = logits.argmax(axis=1)
    tally = np.bincount(preds, minlength=class_count)
    tied = np.flatnonzero(tally == tally.max())
    if len(tied) == 1:
        return int(tied[0]), tally
    prob = nn.softmax(logits).sum(axis=0)[tied]
    best = tied[np.flatnonzero(prob == prob.max())]
    return int(best.min()), tally


def shield_predict(e: ShieldEnsemble, img, call_seed: int) -> tuple[int, np.ndarray]:
    """Defended prediction for one image: one SLQ draw, then the vote."""
    x, _ = slq_batch(np.asarray(img, dtype=np.float64)[None], e.slq.qualities, [call_seed])
    logits = np.stack([nn.forward(m, x[0]) for m in e.models])
    return vote(logits, e.models[0].spec.class_count)


def shield_predict_batch(e: ShieldEnsemble, images, seed: int, indices=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`shield_predict` with call seeds derived from ``(seed, index)``."""
    images = np.asarray(images, dtype=np.float64)
    idx = np.arange(len(images)) if indices is None else np.asarray(indices)
    seeds = [derive_call_seed(seed, i) for i in idx]
    x, _ = slq_batch(images, e.slq.qualities, seeds)
    logits = np.stack([nn.forward(m, x) for m in e.models], axis=1)  # N, M, C
    c = e.models[0].spec.class_count
    preds = np.empty(len(images), dtype=np.int64)
    tallies = np.empty((len(images), c), dtype=np.int64)
    for i in range(len(images)):
        preds[i], tallies[i] = vote(logits[i], c)
    return preds, tallies


def shield_accuracy(e: ShieldEnsemble, images, labels, seed: int) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("dataset is empty")
    preds, _ = shield_predict_batch(e, images, seed)
    return float(np.mean(preds == labels))
