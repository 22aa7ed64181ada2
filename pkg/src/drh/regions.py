"""Multi-scale sliding-window region proposals on a conv feature map.

Window scales are every combination of widths {W_c, W_c//2, W_c//3} and
heights {H_c, H_c//2, H_c//3}. An aspect filter drops the narrowest
widths for portrait images and the shortest heights for landscape ones.
Windows overlap by a fraction lam in both directions; the right/bottom
edge is always covered by one clamped window, so every surviving scale
tiles the whole map.
"""

import math
from dataclasses import dataclass

from .errors import EmptyProjection
from .featmap import FeatureMap

DEFAULT_LAMBDA = 0.6
DEFAULT_ASPECT_THRESHOLD = 1.0


@dataclass(frozen=True)
class RegionBox:
    """Rectangular window in feature-map cell coordinates (inclusive origin)."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative box origin ({self.x0}, {self.y0})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"non-positive box size {self.w}x{self.h}")

    def fits(self, width_c: int, height_c: int) -> bool:
        return self.x0 + self.w <= width_c and self.y0 + self.h <= height_c


@dataclass(frozen=True)
class SlidingWindowConfig:
    lam: float = DEFAULT_LAMBDA  # overlap fraction between adjacent windows
    aspect_threshold: float = DEFAULT_ASPECT_THRESHOLD
    include_global: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lambda must be in [0, 1), got {self.lam}")
        if self.aspect_threshold <= 0.0:
            raise ValueError(f"aspect threshold must be > 0, got {self.aspect_threshold}")


def window_scales(
    width_c: int,
    height_c: int,
    img_w: int,
    img_h: int,
    cfg: SlidingWindowConfig,
) -> list[tuple[int, int]]:
    """Surviving (w, h) window scales for a map of the given size.

    The aspect filter fires strictly: a square image (ratio exactly equal
    to the threshold) keeps all nine scales. Zero-sized scales from tiny
    maps are dropped and duplicate pairs are removed, preserving order.
    """
    if min(width_c, height_c, img_w, img_h) < 1:
        raise ValueError("all dimensions must be positive")
    widths = [width_c, width_c // 2, width_c // 3]
    heights = [height_c, height_c // 2, height_c // 3]
    drop_w = width_c // 3 if img_w / img_h < cfg.aspect_threshold else None
    drop_h = height_c // 3 if img_h / img_w < cfg.aspect_threshold else None

    scales: list[tuple[int, int]] = []
    seen = set()
    for i, w in enumerate(widths):
        for j, h in enumerate(heights):
            if w < 1 or h < 1:
                continue
            if i == 2 and drop_w is not None and w == drop_w:
                continue
            if j == 2 and drop_h is not None and h == drop_h:
                continue
            if (w, h) not in seen:
                seen.add((w, h))
                scales.append((w, h))
    return scales


def _axis_positions(extent: int, win: int, lam: float) -> list[int]:
    """Start offsets along one axis; the far edge is always covered."""
    step = max(1, int(math.floor(win * (1.0 - lam) + 0.5)))
    positions = list(range(0, extent - win + 1, step))
    if positions[-1] + win < extent:
        positions.append(extent - win)
    return positions


def propose_for_dims(
    width_c: int,
    height_c: int,
    img_w: int,
    img_h: int,
    cfg: SlidingWindowConfig,
) -> list[RegionBox]:
    """Sliding-window boxes for a map of the given size (global box first)."""
    global_box = RegionBox(0, 0, width_c, height_c)
    boxes: list[RegionBox] = []
    seen: set[RegionBox] = set()
    if cfg.include_global:
        boxes.append(global_box)
        seen.add(global_box)
    for w, h in window_scales(width_c, height_c, img_w, img_h, cfg):
        for y0 in _axis_positions(height_c, h, cfg.lam):
            for x0 in _axis_positions(width_c, w, cfg.lam):
                box = RegionBox(x0, y0, w, h)
                if box == global_box and not cfg.include_global:
                    continue
                if box not in seen:
                    seen.add(box)
                    boxes.append(box)
    return boxes


def propose_regions(
    fm: FeatureMap, img_w: int, img_h: int, cfg: SlidingWindowConfig
) -> list[RegionBox]:
    """Deterministic proposal list for one feature map.

    Order is global box first (when enabled), then scale-major, then
    y-major, then x-major; duplicates keep their first occurrence.
    """
    return propose_for_dims(fm.width_c, fm.height_c, img_w, img_h, cfg)


def project_bbox(bbox_px: tuple[float, float, float, float], fm: FeatureMap) -> RegionBox:
    """Project an (x, y, w, h) pixel box onto feature-map cells.

    Top-left is floor-divided by the stride, bottom-right ceiling-divided,
    then clamped to the map. Raises EmptyProjection if the box collapses
    below one cell.
    """
    x, y, w, h = bbox_px
    if w <= 0 or h <= 0:
        raise EmptyProjection(f"degenerate pixel box {bbox_px}")
    s = fm.stride
    cx0 = int(math.floor(x / s))
    cy0 = int(math.floor(y / s))
    cx1 = int(math.ceil((x + w) / s))
    cy1 = int(math.ceil((y + h) / s))
    cx0 = max(0, min(cx0, fm.width_c))
    cy0 = max(0, min(cy0, fm.height_c))
    cx1 = max(0, min(cx1, fm.width_c))
    cy1 = max(0, min(cy1, fm.height_c))
    if cx1 - cx0 < 1 or cy1 - cy0 < 1:
        raise EmptyProjection(f"pixel box {bbox_px} collapses outside the map")
    return RegionBox(cx0, cy0, cx1 - cx0, cy1 - cy0)
