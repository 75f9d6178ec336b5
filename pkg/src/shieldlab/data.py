"""Synthetic 10-class dataset and the ADVD binary container.

Class families (32x32, grayscale)::

    0-3  bar gratings at 0, 45, 90, 135 degrees
    4-5  rings of radius 6 and 11
    6-7  checkerboards with 4 px and 8 px cells
    8-9  radial gradients, bright centre and dark centre

Each sample jitters position, contrast and brightness, then adds Gaussian
noise (sigma 0.05) and clips to [0, 1].

Container layout (little endian)::

    b"ADVD" | u8 version=1 | u32 count | u16 height | u16 width | u8 channels=1
    count x ( u8 label | height*width u8 pixels )
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASS_COUNT = 10
IMAGE_SIZE = 32
NOISE_SIGMA = 0.05
CONTRAST_RANGE = (0.2, 0.4)
MAGIC = b"ADVD"
VERSION = 1
_HEADER = struct.Struct("<4sBIHHB")

_SPLIT_CODES = {"train": 1, "eval": 2}


class ContainerError(ValueError):
    """Base class for malformed container files."""


class BadMagicError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class LabelRangeError(ContainerError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "eval"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= CLASS_COUNT):
            raise ValueError("labels must be in [0, 9]")

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=CLASS_COUNT)
        return {str(c): int(n) for c, n in enumerate(counts)}


def _pattern(label: int, rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = (size - 1) / 2 + rng.uniform(-4, 4, size=2)
    if label < 4:
        theta = np.pi / 4 * label
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        period = rng.uniform(7.0, 9.0)
        base = (np.mod(u, period) < period / 2).astype(np.float64)
    elif label < 6:
        radius = (6.0, 11.0)[label - 4]
        r = np.hypot(yy - cy, xx - cx)
        base = (np.abs(r - radius) < 1.8).astype(np.float64)
    elif label < 8:
        cell = (4, 8)[label - 6]
        oy, ox = rng.integers(0, cell, size=2)
        base = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    else:
        r = np.hypot(yy - cy, xx - cx) / (size * 0.7)
        base = np.clip(1.0 - r, 0.0, 1.0)
        if label == 9:
            base = 1.0 - base
    contrast = rng.uniform(*CONTRAST_RANGE)
    low = rng.uniform(0.05, 0.95 - contrast)
    img = low + contrast * base + rng.normal(0.0, NOISE_SIGMA, size=base.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(count: int, seed: int, split: str = "train") -> LabeledDataset:
    """Class-balanced procedural dataset; labels cycle 0..9 in order."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if split not in _SPLIT_CODES:
        raise ValueError(f"split must be 'train' or 'eval', got {split!r}")
    labels = np.arange(count) % CLASS_COUNT
    images = np.empty((count, IMAGE_SIZE, IMAGE_SIZE))
    for i, label in enumerate(labels):
        rng = np.random.default_rng([seed, _SPLIT_CODES[split], i])
        images[i] = _pattern(int(label), rng)
    return LabeledDataset(images=images, labels=labels, split=split)


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(images) * 255.0).astype(np.uint8)


def quantize_8bit(images) -> np.ndarray:
    """Round-trip images through 8-bit storage, as writing a container would."""
    return to_bytes(images).astype(np.float64) / 255.0


def write_container(ds: LabeledDataset, path) -> None:
    n, h, w = ds.images.shape if len(ds) else (0, IMAGE_SIZE, IMAGE_SIZE)
    pixels = to_bytes(ds.images).reshape(n, h * w)
    body = np.concatenate([ds.labels.astype(np.uint8)[:, None], pixels], axis=1)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, h, w, 1))
        fh.write(body.tobytes())


def read_container(path, split: str = "eval") -> LabeledDataset:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: missing ADVD magic")
    if len(data) < _HEADER.size:
        raise TruncatedError(f"{path}: header truncated")
    _, version, n, h, w, channels = _HEADER.unpack_from(data)
    if version != VERSION or channels != 1:
        raise ContainerError(f"{path}: unsupported version {version} / channels {channels}")
    rec = 1 + h * w
    body = data[_HEADER.size :]
    if len(body) < n * rec:
        raise TruncatedError(f"{path}: expected {n} records, found {len(body) // rec}")
    arr = np.frombuffer(body[: n * rec], dtype=np.uint8).reshape(n, rec)
    labels = arr[:, 0].astype(np.int64)
    if labels.size and labels.max() >= CLASS_COUNT:
        raise LabelRangeError(f"{path}: label {labels.max()} out of range")
    images = arr[:, 1:].reshape(n, h, w).astype(np.float64) / 255.0
    return LabeledDataset(images=images, labels=labels, split=split)
