import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_edt(mask):
    """Distance of every pixel to the nearest zero pixel by scanning all pairs."""
    mask = np.asarray(mask)
    zr, zc = np.nonzero(mask == 0)
    out = np.zeros(mask.shape)
    if zr.size == 0:
        return None
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            if mask[r, c]:
                out[r, c] = math.sqrt(float(np.min((zr - r) ** 2 + (zc - c) ** 2)))
    return out


def truth_in_camera(row, pose):
    """Ground-truth midline of a plant row in the camera frame."""
    from pvtrack.geometry import world_line_to_camera

    return world_line_to_camera(row.line(), pose)


def truth_in_pixels(row, pose, geom):
    """Two pixel points on the ground-truth midline, far apart."""
    from pvtrack.geometry import camera_to_pixel

    line = truth_in_camera(row, pose)
    xs = np.array([-50.0, 50.0])
    u, v = camera_to_pixel(xs, line.a * xs + line.b, geom)
    return np.column_stack((u, v))


def pixel_line_distance(points, through):
    """Mean orthogonal distance of ``points`` to the line through two points."""
    p0, p1 = np.asarray(through, dtype=float)
    d = (p1 - p0) / np.linalg.norm(p1 - p0)
    rel = np.asarray(points, dtype=float) - p0
    return float(np.mean(np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])))


def camera_angle_error(line, truth):
    """Angle between two camera-frame lines, radians."""
    return abs(math.atan(line.a) - math.atan(truth.a))
