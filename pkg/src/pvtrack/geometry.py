"""Image, camera and world frames, and the transforms between them.

Frames:

* ``I`` image plane, origin in the upper-left corner, ``u`` along columns,
  ``v`` along rows (pixels).
* ``C`` camera frame, gimbal-stabilised and nadir-looking; ``x`` points to
  the UAV front (towards ``-v``), ``y`` towards ``+u``, ``z`` down.
* ``W`` world frame, planar; a camera pose is ``(x, y, theta)``.

Lines in ``C`` and ``W`` are written in slope-intercept form
``y - a*x - b = 0`` and always carry a frame tag.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import FrameMismatch, NearVerticalLine, SingularObservation

EPS_VERTICAL = 1e-6
EPS_SINGULAR = 1e-12


class Frame(str, enum.Enum):
    CAMERA = "C"
    WORLD = "W"


def normalize_angle(theta):
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class ImageGeometry:
    """Pinhole geometry of a nadir camera at ``z_g`` metres above the ground.

    ``focal`` follows the negative-focal-length convention; only its
    magnitude enters the transforms.
    """

    width: int = 640
    height: int = 512
    focal: float = -0.01
    pixel_scale: float = 17e-6
    z_g: float = 15.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not self.z_g > 0:
            raise ValueError("z_g must be positive")
        if not self.pixel_scale > 0:
            raise ValueError("pixel_scale must be positive")
        if self.focal == 0:
            raise ValueError("focal length must be nonzero")

    @property
    def meters_per_pixel(self) -> float:
        """Ground sampling distance at the current height."""
        return self.pixel_scale / abs(self.focal) * self.z_g

    def at_height(self, z_g: float) -> "ImageGeometry":
        return replace(self, z_g=z_g)

    def scaled(self, factor: float) -> "ImageGeometry":
        """Same field of view with ``factor`` times the resolution."""
        return replace(
            self,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            pixel_scale=self.pixel_scale / factor,
        )


class PixelPoint(NamedTuple):
    u: float
    v: float


class CameraPoint(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class LineParams:
    """Implicit line ``y - a*x - b = 0`` in the tagged frame."""

    a: float
    b: float
    frame: Frame

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"non-finite line parameters ({self.a}, {self.b})")
        object.__setattr__(self, "frame", Frame(self.frame))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b], dtype=float)

    def require(self, frame: Frame) -> "LineParams":
        if self.frame is not Frame(frame):
            raise FrameMismatch(f"expected a line in frame {Frame(frame).value}, got {self.frame.value}")
        return self


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float
    z_g: float = field(default=15.0)

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        if not self.z_g > 0:
            raise ValueError("z_g must be positive")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def pixel_to_camera(p, g: ImageGeometry) -> CameraPoint:
    """Back-project a ground pixel into the camera frame."""
    scale = g.pixel_scale / abs(g.focal) * g.z_g
    u, v = p
    x = scale * (g.height / 2.0 - v)
    y = scale * (u - g.width / 2.0)
    return CameraPoint(x, y, g.z_g)


def pixels_to_camera(u, v, g: ImageGeometry):
    """Vectorised :func:`pixel_to_camera`; returns ``(x, y)`` arrays."""
    scale = g.pixel_scale / abs(g.focal) * g.z_g
    return scale * (g.height / 2.0 - np.asarray(v)), scale * (np.asarray(u) - g.width / 2.0)


def camera_to_pixel(x, y, g: ImageGeometry):
    """Inverse of :func:`pixels_to_camera` (ground points only)."""
    scale = g.pixel_scale / abs(g.focal) * g.z_g
    return np.asarray(y) / scale + g.width / 2.0, g.height / 2.0 - np.asarray(x) / scale


def camera_to_world(x, y, pose: Pose2D):
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    x = np.asarray(x)
    y = np.asarray(y)
    return pose.x + c * x - s * y, pose.y + s * x + c * y


def world_to_camera(X, Y, pose: Pose2D):
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = np.asarray(X) - pose.x
    dy = np.asarray(Y) - pose.y
    return c * dx + s * dy, -s * dx + c * dy


def line_from_camera_points(p1, p2) -> LineParams:
    x1, y1 = p1[0], p1[1]
    x2, y2 = p2[0], p2[1]
    dx = x2 - x1
    if abs(dx) < EPS_VERTICAL:
        raise NearVerticalLine(f"|dx| = {abs(dx):.3g} m below {EPS_VERTICAL}")
    a = (y2 - y1) / dx
    return LineParams(a, y1 - a * x1, Frame.CAMERA)


def _h_denominator(a_w, theta):
    den = math.cos(theta) + math.sin(theta) * a_w
    if abs(den) < EPS_SINGULAR:
        raise SingularObservation(f"line slope {a_w} is parallel to the camera y axis at yaw {theta}")
    return den


def world_line_to_camera(m: LineParams, pose: Pose2D) -> LineParams:
    """Observation model: express the world line ``m`` in the camera frame.

    ``(a - tan t)/(1 + a tan t)`` is evaluated as
    ``(a cos t - sin t)/(cos t + a sin t)``, which is the same quantity but
    stays finite at ``t = +-pi/2``.
    """
    m.require(Frame.WORLD)
    den = _h_denominator(m.a, pose.theta)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    h1 = (m.a * c - s) / den
    h2 = (pose.x * m.a + m.b - pose.y) / den
    return LineParams(h1, h2, Frame.CAMERA)


def camera_line_to_world(o: LineParams, pose: Pose2D) -> LineParams:
    o.require(Frame.CAMERA)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    den = c - s * o.a
    if abs(den) < EPS_SINGULAR:
        raise SingularObservation(f"camera line slope {o.a} maps to a vertical world line at yaw {pose.theta}")
    a_w = (s + c * o.a) / den
    # (0, b) on the camera line, rotated and translated into W
    px = pose.x - s * o.b
    py = pose.y + c * o.b
    return LineParams(a_w, py - a_w * px, Frame.WORLD)


def signed_distance(line: LineParams, point) -> float:
    """Signed orthogonal distance from ``point`` to ``line`` (same frame)."""
    x, y = point[0], point[1]
    return (y - line.a * x - line.b) / math.hypot(line.a, 1.0)


def line_through_points(p1, p2, frame: Frame = Frame.WORLD) -> LineParams:
    line = line_from_camera_points(p1, p2)
    return LineParams(line.a, line.b, frame)
