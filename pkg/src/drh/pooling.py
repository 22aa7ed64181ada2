"""RoI max pooling: channel-wise maximum over a region's cells.

A region descriptor is a plain 1-D float array of length C, independent
of the region size.
"""

import numpy as np

from .featmap import FeatureMap
from .regions import RegionBox


def roi_max_pool(fm: FeatureMap, box: RegionBox, l2_normalize: bool = False) -> np.ndarray:
    """Per-channel max over the box's cells; returns a (C,) float64 vector.

    The hashing layer consumes raw pooled activations; l2_normalize exists
    only for float-descriptor scan baselines.
    """
    if not box.fits(fm.width_c, fm.height_c):
        raise ValueError(f"box {box} exceeds map {fm.width_c}x{fm.height_c}")
    window = fm.data[box.y0 : box.y0 + box.h, box.x0 : box.x0 + box.w, :]
    pooled = window.max(axis=(0, 1)).astype(np.float64)
    if l2_normalize:
        norm = np.linalg.norm(pooled)
        if norm > 0.0:
            pooled /= norm
    return pooled


def pool_boxes(fm: FeatureMap, boxes: list[RegionBox]) -> np.ndarray:
    """Stack roi_max_pool over many boxes into an (n, C) matrix."""
    if not boxes:
        return np.empty((0, fm.channels), dtype=np.float64)
    return np.stack([roi_max_pool(fm, box) for box in boxes])
