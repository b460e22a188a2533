"""RGB front-end: HSV conversion and three-channel band thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InvalidThresholds


@dataclass(frozen=True)
class HsvThresholds:
    """Lower ``(th4, th5, th6)`` and upper ``(th7, th8, th9)`` HSV bounds.

    Hue is in degrees ``[0, 360)``; saturation and value in ``[0, 255]``.
    With ``hue_wrap`` the hue band becomes the complement of ``[th4, th7]``,
    which is how reddish hues straddling 0 degrees are selected.
    """

    th4: float = 190.0
    th5: float = 60.0
    th6: float = 40.0
    th7: float = 250.0
    th8: float = 255.0
    th9: float = 230.0
    hue_wrap: bool = False

    def __post_init__(self):
        if not (0 <= self.th4 <= self.th7 <= 360):
            raise InvalidThresholds(f"hue bounds must satisfy 0 <= th4 <= th7 <= 360, got {self.th4}, {self.th7}")
        if not (self.th5 <= self.th8 and self.th6 <= self.th9):
            raise InvalidThresholds("saturation/value lower bounds exceed upper bounds")

    def as_tuple(self):
        return (self.th4, self.th5, self.th6, self.th7, self.th8, self.th9)


def to_hsv(img) -> np.ndarray:
    """Standard RGB -> HSV; returns float32 ``(H, S, V)`` planes stacked last.

    H is in degrees ``[0, 360)``, S and V on the 0-255 scale of the input.
    Achromatic pixels get hue 0.
    """
    rgb = np.ascontiguousarray(img, dtype=np.float32)
    hsv = cv2.cvtColor(rgb, cv2.COLOR_RGB2HSV)
    # OpenCV returns S in [0, 1] for float input; V keeps the input scale
    hsv[..., 1] *= 255.0
    return hsv


def hsv_to_rgb(h, s, v):
    """Inverse of :func:`to_hsv` for scalars or arrays; returns floats 0-255."""
    h = np.mod(np.asarray(h, dtype=float), 360.0) / 60.0
    s = np.asarray(s, dtype=float) / 255.0
    v = np.asarray(v, dtype=float)
    c = v * s
    x = c * (1.0 - np.abs(np.mod(h, 2.0) - 1.0))
    m = v - c
    sector = np.floor(h).astype(int) % 6
    zeros = np.zeros_like(c)
    table = [
        (c, x, zeros),
        (x, c, zeros),
        (zeros, c, x),
        (zeros, x, c),
        (x, zeros, c),
        (c, zeros, x),
    ]
    r = np.choose(sector, [t[0] for t in table])
    g = np.choose(sector, [t[1] for t in table])
    b = np.choose(sector, [t[2] for t in table])
    return np.stack((r + m, g + m, b + m), axis=-1)


def hue_predicate(hue, th: HsvThresholds) -> np.ndarray:
    inside = (hue > th.th4) & (hue < th.th7)
    # the wrapped band is the exact complement, bounds included
    return ~inside if th.hue_wrap else inside


def threshold_hsv(hsv, th: HsvThresholds) -> np.ndarray:
    hsv = np.asarray(hsv)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    keep = hue_predicate(h, th) & (s > th.th5) & (s < th.th8) & (v > th.th6) & (v < th.th9)
    return keep.astype(np.uint8)


def segment_rgb(img, th: HsvThresholds) -> np.ndarray:
    return threshold_hsv(to_hsv(img), th)
