"""Lossy JPEG quantization round-trip for single-channel images.

Only the information-destroying part of the codec is modeled: level shift,
8x8 orthonormal DCT-II, quality-scaled quantization with rounding, and the
inverse. No entropy coding and no bitstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import BLOCK, as_image, blockify, unblockify

# Example luminance table from Annex K of the JPEG standard (ITU-T T.81).
BASE_LUMINANCE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class QuantTable:
    entries: np.ndarray
    quality: int


def check_quality(q) -> int:
    if isinstance(q, bool) or int(q) != q or not 1 <= q <= 100:
        raise ValueError(f"JPEG quality must be an integer in [1, 100], got {q!r}")
    return int(q)


def quality_scale(q: int) -> int:
    q = check_quality(q)
    return 5000 // q if q < 50 else 200 - 2 * q


@lru_cache(maxsize=None)
def _table_entries(q: int) -> np.ndarray:
    scale = quality_scale(q)
    entries = np.clip((BASE_LUMINANCE * scale + 50) // 100, 1, 255)
    entries.setflags(write=False)
    return entries


def quality_to_table(q: int) -> QuantTable:
    """IJG-style quality scaling of the standard luminance table."""
    q = check_quality(q)
    return QuantTable(entries=_table_entries(q), quality=q)


def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0, :] = np.sqrt(1.0 / n)
    return m


DCT_MATRIX = _dct_matrix()
DCT_MATRIX.setflags(write=False)


def dct2d(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the trailing two (8x8) axes."""
    return DCT_MATRIX @ np.asarray(block, dtype=np.float64) @ DCT_MATRIX.T


def idct2d(coeffs) -> np.ndarray:
    return DCT_MATRIX.T @ np.asarray(coeffs, dtype=np.float64) @ DCT_MATRIX


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def jpeg_round_trip(img, q: int) -> np.ndarray:
    """JPEG(x, q): compress and decompress an image (or batch) at quality ``q``."""
    table = quality_to_table(q).entries
    img = as_image(img)
    h, w = img.shape[-2:]
    coeffs = dct2d(blockify(img * 255.0 - 128.0))
    quantized = round_half_away(coeffs / table) * table
    pixels = unblockify(idct2d(quantized), h, w)
    return np.clip((pixels + 128.0) / 255.0, 0.0, 1.0)
