"""Differentiable stand-in for :func:`shieldlab.jpeg.jpeg_round_trip`.

Hard rounding is replaced by the cubic soft rounding
``round(x) + (x - round(x))**3`` whose derivative ``3 (x - round(x))**2`` is
nonzero almost everywhere, so the attacker can backpropagate through the
quantizer. The final [0, 1] clamp is left out of the differentiated path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ShapeError, as_image, blockify, unblockify, blockify_adjoint
from .jpeg import dct2d, idct2d, quality_to_table, round_half_away


def soft_round(x):
    r = round_half_away(np.asarray(x, dtype=np.float64))
    return r + (x - r) ** 3


def soft_round_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 3.0 * (x - round_half_away(x)) ** 2


def _quantizer_input(img: np.ndarray, table: np.ndarray) -> np.ndarray:
    return dct2d(blockify(img * 255.0 - 128.0)) / table


def diff_jpeg_forward(img, q: int, *, clamp: bool = False) -> np.ndarray:
    """Soft-rounded JPEG round-trip.

    With ``clamp=True`` the output is clipped to [0, 1], which is how the
    image would be materialized; the attack path uses the unclamped value.
    """
    table = quality_to_table(q).entries
    img = as_image(img, check_range=False)
    h, w = img.shape[-2:]
    z = _quantizer_input(img, table)
    pixels = unblockify(idct2d(soft_round(z) * table), h, w)
    out = (pixels + 128.0) / 255.0
    return np.clip(out, 0.0, 1.0) if clamp else out


def diff_jpeg_vjp(img, q: int, cotangent) -> np.ndarray:
    """Reverse-mode product ``cotangent^T J`` of :func:`diff_jpeg_forward`."""
    table = quality_to_table(q).entries
    img = as_image(img, check_range=False)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != img.shape:
        raise ShapeError(f"cotangent shape {cotangent.shape} does not match image {img.shape}")
    h, w = img.shape[-2:]
    z = _quantizer_input(img, table)
    # crop adjoint is zero padding; unshift contributes 1/255; the IDCT adjoint is the DCT
    g = dct2d(blockify(cotangent / 255.0, mode="constant"))
    # dequantize (* table) and quantize (/ table) cancel around the soft-round Jacobian
    g = idct2d(g * soft_round_grad(z))
    return blockify_adjoint(g, h, w) * 255.0


@dataclass(frozen=True)
class DifferentiableTransform:
    forward: Callable[[np.ndarray], np.ndarray]
    vjp: Callable[[np.ndarray, np.ndarray], np.ndarray]


def diff_jpeg_transform(q: int) -> DifferentiableTransform:
    quality_to_table(q)
    return DifferentiableTransform(
        forward=lambda x: diff_jpeg_forward(x, q),
        vjp=lambda x, ct: diff_jpeg_vjp(x, q, ct),
    )


def identity_transform() -> DifferentiableTransform:
    return DifferentiableTransform(forward=lambda x: np.asarray(x, dtype=np.float64), vjp=lambda x, ct: ct)
