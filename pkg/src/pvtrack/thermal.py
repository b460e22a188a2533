"""Thermal front-end: band threshold, distance filter, binarisation, regions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import cv2
import numpy as np

from .errors import InvalidThresholds


@dataclass(frozen=True, eq=False)
class Region:
    """A 4-connected set of mask pixels.

    ``rows`` and ``cols`` hold integer pixel indices; geometric computations
    use pixel centres ``(col + 0.5, row + 0.5)`` so that the image spans the
    continuous rectangle ``[0, U] x [0, V]``.
    """

    rows: np.ndarray
    cols: np.ndarray

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """``(u_min, v_min, u_max, v_max)``, max exclusive."""
        return (
            int(self.cols.min()),
            int(self.rows.min()),
            int(self.cols.max()) + 1,
            int(self.rows.max()) + 1,
        )

    @cached_property
    def points(self) -> np.ndarray:
        """Pixel centres as an ``(area, 2)`` array of ``(u, v)``."""
        return np.column_stack((self.cols + 0.5, self.rows + 0.5))

    def to_mask(self, shape) -> np.ndarray:
        mask = np.zeros(shape, dtype=np.uint8)
        mask[self.rows, self.cols] = 1
        return mask


def threshold_band(img, th1, th2) -> np.ndarray:
    """Keep intensities strictly inside ``(th1, th2)``, zero elsewhere."""
    if not 0 <= th1 < th2 <= 255:
        raise InvalidThresholds(f"need 0 <= th1 < th2 <= 255, got th1={th1}, th2={th2}")
    img = np.asarray(img)
    keep = (img > th1) & (img < th2)
    return np.where(keep, img, 0).astype(img.dtype, copy=False)


def distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance of every pixel to the nearest zero pixel.

    Zero pixels get 0. A raster without any zero pixel has no defined
    distance; every entry is then ``width + height``.
    """
    mask = np.asarray(mask)
    nonzero = (mask != 0).view(np.uint8)
    if nonzero.all():
        return np.full(mask.shape, float(mask.shape[0] + mask.shape[1]))
    d = cv2.distanceTransform(nonzero, cv2.DIST_L2, cv2.DIST_MASK_PRECISE)
    # the float32 result is within 1e-4 of sqrt(integer); snap the squared
    # distance back to that integer so values are exact in float64
    d = d.astype(np.float64)
    return np.sqrt(np.rint(d * d))


def binarize_distance(d, th3) -> np.ndarray:
    if not th3 > 0:
        raise InvalidThresholds(f"th3 must be positive, got {th3}")
    return (np.asarray(d) > th3).astype(np.uint8)


def extract_regions(mask, min_area=1) -> list[Region]:
    """4-connected components of the 1-pixels with at least ``min_area`` pixels.

    Regions come out in raster order of their first (top-left-most) pixel.
    """
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    binary = (np.asarray(mask) != 0).view(np.uint8)
    n, labels, stats, _ = cv2.connectedComponentsWithStats(binary, connectivity=4, ltype=cv2.CV_32S)
    regions = []
    for lab in range(1, n):
        u0, v0, w, h, area = stats[lab]
        if area < min_area:
            continue
        rr, cc = np.nonzero(labels[v0 : v0 + h, u0 : u0 + w] == lab)
        regions.append(Region(rows=rr + v0, cols=cc + u0))
    regions.sort(key=lambda r: (int(r.rows[0]), int(r.cols[0])))
    return regions


def segment_thermal(img, th1, th2, th3) -> np.ndarray:
    """Band threshold, distance filter and binarisation in one call."""
    return binarize_distance(distance_transform(threshold_band(img, th1, th2)), th3)
