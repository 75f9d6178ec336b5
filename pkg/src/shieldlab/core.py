"""Image primitives shared by the whole toolkit.

Images are plain ``numpy`` arrays of dtype float64 with values in ``[0, 1]``.
A single image has shape ``(H, W)``; a batch has shape ``(N, H, W)``. Most
functions accept either and operate on the trailing two axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK = 8


class ShapeError(ValueError):
    """Raised when two images (or an image and a model) disagree on shape."""


def as_image(data, *, check_range: bool = True) -> np.ndarray:
    """Coerce ``data`` to a float64 image or image batch, validating it."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ShapeError(f"expected (H, W) or (N, H, W) array, got shape {arr.shape}")
    if arr.shape[-1] < 1 or arr.shape[-2] < 1:
        raise ShapeError("image height and width must be positive")
    if check_range and arr.size and (arr.min() < 0.0 or arr.max() > 1.0 or not np.all(np.isfinite(arr))):
        raise ValueError("pixel values must lie in [0, 1]")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class BlockGrid:
    """An image cut into ``block_size`` square tiles.

    ``blocks`` has shape ``(..., blocks_y, blocks_x, block_size, block_size)``;
    leading axes are batch axes. Edge tiles are padded by replicating the last
    row/column of the image.
    """

    blocks: np.ndarray
    pad_bottom: int
    pad_right: int
    block_size: int = BLOCK

    @property
    def blocks_y(self) -> int:
        return self.blocks.shape[-4]

    @property
    def blocks_x(self) -> int:
        return self.blocks.shape[-3]

    @property
    def height(self) -> int:
        return self.blocks_y * self.block_size - self.pad_bottom

    @property
    def width(self) -> int:
        return self.blocks_x * self.block_size - self.pad_right


def pad_amounts(height: int, width: int, block: int = BLOCK) -> tuple[int, int]:
    return (-height) % block, (-width) % block


def blockify(arr: np.ndarray, block: int = BLOCK, mode: str = "edge") -> np.ndarray:
    """Pad the trailing two axes to a multiple of ``block`` and tile them.

    ``mode="edge"`` replicates the last row/column; ``mode="constant"`` pads
    with zeros, which is the adjoint of :func:`unblockify`'s cropping.
    Returns shape ``(..., by, bx, block, block)``.
    """
    h, w = arr.shape[-2:]
    pb, pr = pad_amounts(h, w, block)
    if pb or pr:
        widths = [(0, 0)] * (arr.ndim - 2) + [(0, pb), (0, pr)]
        arr = np.pad(arr, widths, mode=mode)
    hp, wp = arr.shape[-2:]
    lead = arr.shape[:-2]
    tiles = arr.reshape(*lead, hp // block, block, wp // block, block)
    return np.swapaxes(tiles, -3, -2)


def unblockify(tiles: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`blockify`: reassemble tiles and strip the padding."""
    by, bx, b, _ = tiles.shape[-4:]
    lead = tiles.shape[:-4]
    arr = np.swapaxes(tiles, -3, -2).reshape(*lead, by * b, bx * b)
    return arr[..., :height, :width]


def blockify_adjoint(tiles: np.ndarray, height: int, width: int) -> np.ndarray:
    """Adjoint of :func:`blockify` with edge padding: retile, then fold the padding back.

    Gradient flowing into a replicated padding pixel is accumulated onto the
    edge pixel it was copied from.
    """
    by, bx, b, _ = tiles.shape[-4:]
    lead = tiles.shape[:-4]
    full = np.swapaxes(tiles, -3, -2).reshape(*lead, by * b, bx * b).copy()
    if full.shape[-2] > height:
        full[..., height - 1, :] += full[..., height:, :].sum(axis=-2)
    if full.shape[-1] > width:
        full[..., :, width - 1] += full[..., :, width:].sum(axis=-1)
    return full[..., :height, :width]


def to_blocks(img) -> BlockGrid:
    img = as_image(img)
    h, w = img.shape[-2:]
    pb, pr = pad_amounts(h, w)
    return BlockGrid(blocks=blockify(img), pad_bottom=pb, pad_right=pr)


def from_blocks(grid: BlockGrid) -> np.ndarray:
    return unblockify(grid.blocks, grid.height, grid.width)


def linf_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def project_linf(x_adv, x_orig, eps: float) -> np.ndarray:
    """Clamp ``x_adv`` into the ``eps`` box around ``x_orig``, then into [0, 1]."""
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    _check_same_shape(x_adv, x_orig)
    out = np.clip(np.clip(x_adv, x_orig - eps, x_orig + eps), 0.0, 1.0)
    # x_orig + eps can round up by an ulp; walk offenders back so |out - x_orig| <= eps holds exactly
    for _ in range(4):
        over = np.abs(out - x_orig) > eps
        if not over.any():
            break
        out[over] = np.nextafter(out[over], x_orig[over])
    return out


@dataclass(frozen=True)
class PerturbationStats:
    linf: float
    l2: float


def perturbation_stats(adv, orig) -> PerturbationStats:
    return PerturbationStats(linf=linf_distance(adv, orig), l2=l2_distance(adv, orig))


def batch_perturbation_stats(adv: np.ndarray, orig: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-image (linf, l2) arrays for batches of shape ``(N, H, W)``."""
    adv = np.asarray(adv, dtype=np.float64)
    orig = np.asarray(orig, dtype=np.float64)
    _check_same_shape(adv, orig)
    diff = (adv - orig).reshape(len(adv), -1)
    return np.abs(diff).max(axis=1), np.sqrt((diff**2).sum(axis=1))
