"""Mask/box geometry: tight boxes, pixel spans, and nearest-neighbor crops."""

from __future__ import annotations

import numpy as np

from ..errors import EmptyMask
from .types import BinaryMask, BoundingBox, ImageGrid

CROP_SIZE = 32

# Guard against float round-off when mapping normalized coords back to pixels.
_EDGE_EPS = 1e-7


def bbox_from_mask(mask: BinaryMask) -> BoundingBox:
    """Tight normalized box around the set pixels of `mask`.

    Pixel (col c, row r) maps to x_min = c_min / width and
    x_max = (c_max + 1) / width (exclusive max edge), likewise for rows.
    """
    if mask.is_empty():
        raise EmptyMask("cannot compute a bounding box of an empty mask")
    rows, cols = np.nonzero(mask.bits)
    h, w = mask.height, mask.width
    return BoundingBox(
        x_min=float(cols.min()) / w,
        y_min=float(rows.min()) / h,
        x_max=float(cols.max() + 1) / w,
        y_max=float(rows.max() + 1) / h,
    )


def box_pixel_span(box: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Inclusive pixel span (r0, r1, c0, c1) covered by a normalized box."""
    c0 = int(np.floor(box.x_min * width + _EDGE_EPS))
    c1 = int(np.ceil(box.x_max * width - _EDGE_EPS)) - 1
    r0 = int(np.floor(box.y_min * height + _EDGE_EPS))
    r1 = int(np.ceil(box.y_max * height - _EDGE_EPS)) - 1
    c0, c1 = max(c0, 0), min(c1, width - 1)
    r0, r1 = max(r0, 0), min(r1, height - 1)
    return r0, r1, c0, c1


def crop_to_box(image: ImageGrid, box: BoundingBox, size: int = CROP_SIZE) -> ImageGrid:
    """Crop the pixel span of `box` and resample to size x size, nearest-neighbor.

    Nearest-neighbor uses pixel centers: output cell i samples the source row
    r0 + floor((i + 0.5) * span_h / size).
    """
    r0, r1, c0, c1 = box_pixel_span(box, image.width, image.height)
    sub = image.pixels[r0 : r1 + 1, c0 : c1 + 1]
    span_h, span_w = sub.shape
    rows = np.minimum((np.arange(size) + 0.5) * span_h / size, span_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(size) + 0.5) * span_w / size, span_w - 1).astype(np.int64)
    return ImageGrid(sub[np.ix_(rows, cols)])


def crop_mask_to_box(mask: BinaryMask, box: BoundingBox, size: int = CROP_SIZE) -> np.ndarray:
    """Same resampling as crop_to_box, applied to a boolean raster."""
    r0, r1, c0, c1 = box_pixel_span(box, mask.width, mask.height)
    sub = mask.bits[r0 : r1 + 1, c0 : c1 + 1]
    span_h, span_w = sub.shape
    rows = np.minimum((np.arange(size) + 0.5) * span_h / size, span_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(size) + 0.5) * span_w / size, span_w - 1).astype(np.int64)
    return sub[np.ix_(rows, cols)]


def mask_centroid(mask: BinaryMask) -> tuple[float, float]:
    """(row, col) centroid of the set pixels."""
    if mask.is_empty():
        raise EmptyMask("centroid of an empty mask is undefined")
    rows, cols = np.nonzero(mask.bits)
    return float(rows.mean()), float(cols.mean())
