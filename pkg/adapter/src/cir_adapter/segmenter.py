"""Instance discovery and masked pooling over the patch feature grid.

The ``color-region`` backend works at patch-grid resolution: each cell gets
a coarse color bucket (one bit per channel), the background bucket is voted
by the border cells, and instances are 4-connected components of the
remaining cells.  ``box_threshold`` scales the minimum size: components
covering less than box_threshold/10 of the frame are dropped.
``text_threshold`` is carried in the config for text-grounded backends and
is unused here.  Zero surviving instances is a legal outcome.

Pooling follows the masks over the same feature map that yields the patch
tokens; a mask covering the whole frame therefore pools to the mean of all
patch features.  Duplicate masks yield duplicate vectors (no deduplication).
"""

from __future__ import annotations

import numpy as np

from .encoders import PATCH, EncodedImage, load_image
from .errors import SegmenterFailureError


def masked_pool(feature_grid: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean feature over the masked cells."""
    if mask.shape != feature_grid.shape[:2]:
        raise SegmenterFailureError(
            f"mask shape {mask.shape} does not match grid {feature_grid.shape[:2]}"
        )
    if not mask.any():
        raise SegmenterFailureError("cannot pool an empty mask")
    return feature_grid[mask].mean(axis=0)


def _color_buckets(rgb: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    gh, gw = grid
    h, w = gh * PATCH, gw * PATCH
    padded = np.pad(
        rgb, ((0, h - rgb.shape[0]), (0, w - rgb.shape[1]), (0, 0)), mode="edge"
    )
    cells = padded.reshape(gh, PATCH, gw, PATCH, 3).mean(axis=(1, 3))
    bits = (cells >= 0.5).astype(np.int64)
    return bits[..., 0] * 4 + bits[..., 1] * 2 + bits[..., 2]


def _components(same_bucket: np.ndarray) -> list[np.ndarray]:
    """4-connected components of a boolean grid, in scan order."""
    gh, gw = same_bucket.shape
    seen = np.zeros_like(same_bucket, dtype=bool)
    masks = []
    for start_r in range(gh):
        for start_c in range(gw):
            if not same_bucket[start_r, start_c] or seen[start_r, start_c]:
                continue
            stack = [(start_r, start_c)]
            seen[start_r, start_c] = True
            mask = np.zeros_like(same_bucket, dtype=bool)
            while stack:
                r, c = stack.pop()
                mask[r, c] = True
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < gh and 0 <= nc < gw and same_bucket[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        stack.append((nr, nc))
            masks.append(mask)
    return masks


def segment_masks(source, grid: tuple[int, int], box_threshold: float) -> list[np.ndarray]:
    """Instance masks at patch-grid resolution, background removed."""
    rgb = load_image(source)
    buckets = _color_buckets(rgb, grid)
    gh, gw = grid
    border = np.concatenate([buckets[0, :], buckets[-1, :], buckets[:, 0], buckets[:, -1]])
    background = np.bincount(border, minlength=8).argmax()
    min_cells = max(1, int(np.ceil((box_threshold / 10.0) * gh * gw)))
    masks = []
    for bucket in range(8):
        if bucket == background:
            continue
        for mask in _components(buckets == bucket):
            if mask.sum() >= min_cells:
                masks.append(mask)
    return masks


def segment_and_pool(source, encoded: EncodedImage, box_threshold: float) -> np.ndarray:
    """Instance features via masked average pooling; shape (M, D), M >= 0."""
    masks = segment_masks(source, encoded.grid, box_threshold)
    grid = encoded.feature_grid
    if not masks:
        return np.zeros((0, encoded.patches.shape[1]))
    return np.stack([masked_pool(grid, mask) for mask in masks])
