"""Quadrant decomposition of images into a block pyramid.

Level 0 is the whole image; level ``d`` holds ``4**d`` blocks of size
``(H / 2**d, W / 2**d)``. Blocks are ordered recursively as top-left,
top-right, bottom-left, bottom-right, so the four children of a block
are contiguous and the order matches a Z-order (Morton) walk.

Functions accept a single ``[C, H, W]`` image or a batch ``[N, C, H, W]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def block_count(depth):
    """Total number of blocks over levels ``0..depth``."""
    return (4 ** (depth + 1) - 1) // 3


def split_quadrants(block):
    """Split the last two axes in half; returns ``(TL, TR, BL, BR)``."""
    block = np.asarray(block)
    if block.ndim < 2:
        raise ShapeError(f"cannot split shape {block.shape}")
    h, w = block.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"quadrant split needs even extents, got {h}x{w}")
    hh, hw = h // 2, w // 2
    return (
        block[..., :hh, :hw],
        block[..., :hh, hw:],
        block[..., hh:, :hw],
        block[..., hh:, hw:],
    )


def merge_quadrants(tl, tr, bl, br):
    """Inverse of :func:`split_quadrants`."""
    top = np.concatenate([tl, tr], axis=-1)
    bottom = np.concatenate([bl, br], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def _next_level(level):
    # level: (..., n_blocks, C, h, w) -> (..., 4 * n_blocks, C, h/2, w/2)
    quads = np.stack(split_quadrants(level), axis=-4)
    shape = level.shape[:-4] + (level.shape[-4] * 4,) + quads.shape[-3:]
    return quads.reshape(shape)


@dataclass(frozen=True)
class BlockPyramid:
    """Blocks of one image (or batch) per level.

    ``levels[d]`` has shape ``(4**d, C, h, w)`` for a single image, or
    ``(N, 4**d, C, h, w)`` for a batch.
    """

    levels: tuple

    @property
    def depth(self):
        return len(self.levels) - 1

    def blocks(self):
        """Flat list of every block in pyramid order (single image only)."""
        out = []
        for level in self.levels:
            if level.ndim != 4:
                raise ShapeError("blocks() is defined for single-image pyramids")
            out.extend(level[i] for i in range(level.shape[0]))
        return out

    def __len__(self):
        return sum(level.shape[-4] for level in self.levels)

    def reassemble(self, d):
        """Rebuild the full image from level ``d``'s blocks."""
        level = self.levels[d]
        for _ in range(d):
            n = level.shape[-4] // 4
            grouped = level.reshape(level.shape[:-4] + (n, 4) + level.shape[-3:])
            level = merge_quadrants(*(grouped[..., i, :, :, :] for i in range(4)))
        return level[..., 0, :, :, :]


def build_pyramid(image, depth):
    """Decompose ``image`` (``[C, H, W]`` or ``[N, C, H, W]``) to ``depth`` levels."""
    image = np.asarray(image)
    if image.ndim not in (3, 4):
        raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got {image.shape}")
    if depth < 0:
        raise ShapeError(f"depth must be >= 0, got {depth}")
    h, w = image.shape[-2:]
    f = 2 ** depth
    if h % f or w % f:
        raise ShapeError(f"{h}x{w} image is not divisible by 2**{depth}")
    level = image[..., None, :, :, :]
    levels = [level]
    for _ in range(depth):
        level = _next_level(level)
        levels.append(level)
    return BlockPyramid(tuple(levels))
