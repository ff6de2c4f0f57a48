"""Segmentation potentials for (candidate box, segment) pairs.

Six features per class: a K*K in-box segment grid, segment-out fraction,
a K*K in-box background grid, background-out fraction, box/segment tight-box
overlap, and a logistic segment class score.  All grid counts go through the
segment's summed-area table, so each feature costs four lookups per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import Box, iou
from .errors import DegenerateNormalizer, EmptySegment
from .masks import SegmentMask, rect_count, tight_box


@dataclass(frozen=True)
class GridSpec:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("grid side must be >= 1")


def block_length(k: int) -> int:
    """Per-class segmentation feature length."""
    return 2 * k * k + 4


def grid_cells(p: Box, grid: GridSpec):
    """Partition the rounded box into K*K near-equal inclusive rectangles.

    Remainder pixels go to the last row/column of cells.  Cells are yielded
    row-major; a cell can be empty (x1 > x2) when the box is thinner than K.
    """
    x1, y1, x2, y2 = p.rounded()
    k = grid.k
    w = x2 - x1 + 1
    h = y2 - y1 + 1
    bw = w // k
    bh = h // k
    cells = []
    for r in range(k):
        cy1 = y1 + r * bh
        cy2 = y1 + (r + 1) * bh - 1 if r < k - 1 else y2
        for c in range(k):
            cx1 = x1 + c * bw
            cx2 = x1 + (c + 1) * bw - 1 if c < k - 1 else x2
            cells.append((cx1, cy1, cx2, cy2))
    return cells


def _require_pixels(s: SegmentMask):
    if s.pixel_count == 0:
        raise EmptySegment(f"segment {s.segment_id} of {s.image_id} is empty")


def _background_denominator(m: int, seg_pixels: int) -> int:
    if m < seg_pixels:
        raise DegenerateNormalizer(f"largest-segment area {m} < segment size {seg_pixels}")
    return max(m - seg_pixels, 1)


def seggrid_in(p: Box, s: SegmentMask, grid: GridSpec) -> np.ndarray:
    """Fraction of the segment's pixels falling in each grid cell."""
    _require_pixels(s)
    table = s.integral()
    counts = [rect_count(table, *cell) for cell in grid_cells(p, grid)]
    return np.asarray(counts, dtype=np.float64) / s.pixel_count


def seg_out(p: Box, s: SegmentMask) -> float:
    """Fraction of the segment's pixels outside the box."""
    _require_pixels(s)
    x1, y1, x2, y2 = p.rounded()
    inside = rect_count(s.integral(), x1, y1, x2, y2)
    return (s.pixel_count - inside) / s.pixel_count


def _cell_area(cell, width, height):
    x1, y1, x2, y2 = cell
    x1 = max(x1, 0)
    y1 = max(y1, 0)
    x2 = min(x2, width - 1)
    y2 = min(y2, height - 1)
    if x1 > x2 or y1 > y2:
        return 0
    return (x2 - x1 + 1) * (y2 - y1 + 1)


def backgrid_in(p: Box, s: SegmentMask, grid: GridSpec, m: int) -> np.ndarray:
    """Per-cell count of non-segment pixels, normalized by M - |S|."""
    _require_pixels(s)
    denom = _background_denominator(m, s.pixel_count)
    table = s.integral()
    vals = []
    for cell in grid_cells(p, grid):
        area = _cell_area(cell, s.width, s.height)
        vals.append((area - rect_count(table, *cell)) / denom)
    return np.asarray(vals, dtype=np.float64)


def back_out(p: Box, s: SegmentMask, m: int) -> float:
    """Non-segment pixels outside the box, over the whole image, normalized by M - |S|."""
    _require_pixels(s)
    denom = _background_denominator(m, s.pixel_count)
    x1, y1, x2, y2 = p.rounded()
    box_area = _cell_area((x1, y1, x2, y2), s.width, s.height)
    seg_in_box = rect_count(s.integral(), x1, y1, x2, y2)
    outside = s.height * s.width - box_area
    seg_outside = s.pixel_count - seg_in_box
    return (outside - seg_outside) / denom


def overlap_feat(p: Box, s: SegmentMask, lam: float) -> float:
    """IoU between the box and the segment's tight box, minus the bias lam."""
    _require_pixels(s)
    return iou(p, tight_box(s)) - lam


def segclass_feat(score: float) -> float:
    """Logistic squashing of a raw per-segment class score."""
    if not math.isfinite(score):
        raise ValueError(f"non-finite segment class score {score}")
    if score >= 0:
        return 1.0 / (1.0 + math.exp(-score))
    e = math.exp(score)
    return e / (1.0 + e)


def assemble_block(p: Box, s: SegmentMask | None, class_score: float,
                   grid: GridSpec, lam: float, m: int) -> np.ndarray:
    """Concatenate the six features for one (box, segment, class) triple.

    Layout: [grid_in (K*K), seg_out, back_in (K*K), back_out, overlap, segclass].
    A None segment encodes "no segment chosen" and yields the all-zero block.
    """
    n = block_length(grid.k)
    if s is None:
        return np.zeros(n, dtype=np.float64)
    kk = grid.k * grid.k
    out = np.empty(n, dtype=np.float64)
    out[:kk] = seggrid_in(p, s, grid)
    out[kk] = seg_out(p, s)
    out[kk + 1:2 * kk + 1] = backgrid_in(p, s, grid, m)
    out[2 * kk + 1] = back_out(p, s, m)
    out[2 * kk + 2] = overlap_feat(p, s, lam)
    out[2 * kk + 3] = segclass_feat(class_score)
    return out
