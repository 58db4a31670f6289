"""ROI extraction, binary-mask arithmetic, and cross-plane merging.

The embryo ROI is a fixed-size square window centered on the zona
pellucida: downstream models expect one input size, so at image borders
the window shifts instead of shrinking. Detection candidates from the
three middle focal planes describe the same physical objects, so
overlapping candidates are merged by keeping the single most confident
one; masks are never fused or averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    MixedKindsError,
    NoEmbryoError,
    RoiBoundsError,
    ShapeMismatchError,
    ValidationError,
)
from .model import BinaryMask, InstanceCandidate, SegClass, SegmentationMap

DEFAULT_ROI_SIDE = 328
DEFAULT_MERGE_IOU = 0.5


@dataclass(frozen=True)
class Roi:
    """A square crop window: top-left offset (x, y), side, and center."""

    x: int
    y: int
    side: int
    center: tuple[int, int]

    def __post_init__(self):
        if self.side <= 0:
            raise ValidationError("ROI side must be positive")
        if self.x < 0 or self.y < 0:
            raise ValidationError("ROI offsets must be non-negative")
        object.__setattr__(self, "x", int(self.x))
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "side", int(self.side))
        object.__setattr__(
            self, "center", (int(self.center[0]), int(self.center[1]))
        )


def _clamped_window(center: int, side: int, extent: int) -> int:
    """Top-left offset of a length-`side` window centered at `center`,
    shifted to fit [0, extent)."""
    if side > extent:
        raise RoiBoundsError(f"ROI side {side} exceeds image extent {extent}")
    return max(0, min(center - side // 2, extent - side))


def roi_around(
    center: tuple[int, int], side: int, width: int, height: int
) -> Roi:
    """Side x side window at `center`, shifted (never shrunk) into bounds."""
    cx, cy = int(center[0]), int(center[1])
    return Roi(
        x=_clamped_window(cx, side, width),
        y=_clamped_window(cy, side, height),
        side=side,
        center=(cx, cy),
    )


def center_roi(width: int, height: int, side: int | None = None) -> Roi:
    """Image-centered ROI; the fallback when no embryo is found.

    With no side given, covers the full image (assumes square images).
    """
    if side is None:
        side = min(width, height)
    return roi_around((width // 2, height // 2), side, width, height)


def embryo_roi(seg_map: SegmentationMap, side: int = DEFAULT_ROI_SIDE) -> Roi:
    """ROI centered on the zona and its interior.

    The center is the tight bounding box center of all pixels labeled
    zona or inside-zona, with half-pixel midpoints rounded up so the
    result shifts exactly with the embryo.

    Raises:
        NoEmbryoError: the map contains no zona / inside-zona pixels;
            callers should fall back to :func:`center_roi` and report it.
    """
    labels = seg_map.labels
    embryo = (labels == SegClass.ZONA) | (labels == SegClass.INSIDE_ZONA)
    rows = np.flatnonzero(embryo.any(axis=1))
    cols = np.flatnonzero(embryo.any(axis=0))
    if rows.size == 0:
        raise NoEmbryoError("segmentation contains no zona or inside-zona pixels")
    cx = (int(cols[0]) + int(cols[-1]) + 1) // 2
    cy = (int(rows[0]) + int(rows[-1]) + 1) // 2
    return roi_around((cx, cy), side, seg_map.width, seg_map.height)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two equal-sized masks."""
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeMismatchError(
            f"mask shapes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    aa = a.to_array()
    bb = b.to_array()
    union = int(np.logical_or(aa, bb).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(aa, bb).sum())
    return inter / union


def merge_across_planes(
    candidates: Sequence[InstanceCandidate],
    iou_threshold: float = DEFAULT_MERGE_IOU,
) -> list[InstanceCandidate]:
    """Merge duplicate detections of one object across focal planes.

    Greedy suppression over the pooled candidates: repeatedly keep the
    most confident remaining candidate and drop everything (from any
    plane, including its own) whose mask IoU with it is >= the
    threshold. Ties go to the lower plane index, then the smaller bbox
    x. The survivors are returned in that order, i.e. descending
    confidence.
    """
    if not candidates:
        return []
    kinds = {c.kind for c in candidates}
    if len(kinds) > 1:
        raise MixedKindsError("cannot merge cell and pronucleus candidates together")
    dims = {(c.mask.width, c.mask.height) for c in candidates}
    if len(dims) > 1:
        raise ShapeMismatchError(f"candidate masks have mixed dimensions: {dims}")

    order = sorted(
        candidates, key=lambda c: (-c.confidence, c.plane, c.bbox[0])
    )
    arrays = [c.mask.to_array() for c in order]
    areas = [int(a.sum()) for a in arrays]
    suppressed = [False] * len(order)
    survivors: list[InstanceCandidate] = []
    for i, cand in enumerate(order):
        if suppressed[i]:
            continue
        survivors.append(cand)
        for j in range(i + 1, len(order)):
            if suppressed[j]:
                continue
            inter = int(np.logical_and(arrays[i], arrays[j]).sum())
            union = areas[i] + areas[j] - inter
            if union > 0 and inter / union >= iou_threshold:
                suppressed[j] = True
    return survivors


def crop_to_roi(grid: BinaryMask | SegmentationMap, roi: Roi):
    """Sub-grid copy of the ROI window; returns the same type it is given.

    Raises:
        RoiBoundsError: the window does not lie inside the grid.
    """
    if isinstance(grid, BinaryMask):
        width, height = grid.width, grid.height
    elif isinstance(grid, SegmentationMap):
        width, height = grid.width, grid.height
    else:
        raise ValidationError(f"cannot crop a {type(grid).__name__}")
    if roi.x + roi.side > width or roi.y + roi.side > height:
        raise RoiBoundsError(
            f"ROI [{roi.x},{roi.x + roi.side})x[{roi.y},{roi.y + roi.side}) "
            f"outside {width}x{height} grid"
        )
    if isinstance(grid, BinaryMask):
        window = grid.to_array()[roi.y : roi.y + roi.side, roi.x : roi.x + roi.side]
        return BinaryMask.from_array(window)
    window = grid.labels[roi.y : roi.y + roi.side, roi.x : roi.x + roi.side]
    return SegmentationMap(window)
