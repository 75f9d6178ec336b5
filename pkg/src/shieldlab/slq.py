"""Stochastic Local Quantization (SLQ).

The image is compressed at every configured JPEG quality, then each 8x8 block
of the output is copied from one of those candidates chosen at random. There
is deliberately no central cropping step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import BLOCK, as_image, pad_amounts
from .jpeg import check_quality, jpeg_round_trip

DEFAULT_QUALITIES = (20, 40, 60, 80)


@dataclass(frozen=True)
class SlqConfig:
    qualities: tuple[int, ...] = DEFAULT_QUALITIES
    seed: int = 0
    block_size: int = field(default=BLOCK)

    def __post_init__(self):
        qs = tuple(check_quality(q) for q in self.qualities)
        if not qs:
            raise ValueError("SLQ needs at least one quality")
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError(f"SLQ qualities must be strictly increasing, got {qs}")
        if self.block_size != BLOCK:
            raise ValueError("SLQ block size is fixed at 8")
        object.__setattr__(self, "qualities", qs)


def block_choices(seed: int, blocks_y: int, blocks_x: int, k: int) -> np.ndarray:
    """Quality index per block, each drawn from its own (seed, by, bx) stream.

    Streams are keyed by position, so the draw for one block never depends on
    the order in which blocks are visited.
    """
    out = np.empty((blocks_y, blocks_x), dtype=np.int64)
    for by in range(blocks_y):
        for bx in range(blocks_x):
            rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, by, bx])
            out[by, bx] = rng.integers(k)
    return out


def stitch(candidates: np.ndarray, choice_map: np.ndarray) -> np.ndarray:
    """Build the mosaic from ``candidates`` of shape ``(K, H, W)``."""
    _, h, w = candidates.shape
    rows = np.minimum(np.arange(h) // BLOCK, choice_map.shape[0] - 1)
    cols = np.minimum(np.arange(w) // BLOCK, choice_map.shape[1] - 1)
    pick = choice_map[rows[:, None], cols[None, :]]
    return np.take_along_axis(candidates, pick[None], axis=0)[0]


def slq_preprocess(img, cfg: SlqConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return the SLQ mosaic of a single image and its per-block choice map."""
    img = as_image(img)
    if img.ndim != 2:
        raise ValueError("slq_preprocess works on one (H, W) image")
    candidates = np.stack(slq_expected_logit_input(img, cfg.qualities))
    h, w = img.shape
    pb, pr = pad_amounts(h, w)
    choice_map = block_choices(cfg.seed, (h + pb) // BLOCK, (w + pr) // BLOCK, len(cfg.qualities))
    return stitch(candidates, choice_map), choice_map


def slq_expected_logit_input(img, qualities) -> list[np.ndarray]:
    """The K compressed images the adaptive attacker averages over."""
    qualities = list(qualities)
    if not qualities:
        raise ValueError("quality list is empty")
    return [jpeg_round_trip(img, q) for q in qualities]


def choice_map_to_json(choice_map: np.ndarray) -> str:
    return json.dumps(np.asarray(choice_map).tolist())
