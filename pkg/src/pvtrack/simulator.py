"""Deterministic desk-scale PV plant simulator.

Paired thermal/RGB frames are synthesised directly from the plant layout
and the camera pose, so both cameras are pixel-registered. UAV motion is a
first-order velocity lag with rate-limited yaw, and GPS readings carry a
constant bias, a random walk and white noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import cv2
import numpy as np

from .geometry import (
    Frame,
    ImageGeometry,
    LineParams,
    Pose2D,
    camera_to_pixel,
    normalize_angle,
    pixels_to_camera,
    world_to_camera,
)
from .mission import Waypoint, boustrophedon
from .rgb import hsv_to_rgb


@dataclass(frozen=True)
class PlantRow:
    start: tuple[float, float]
    end: tuple[float, float]
    width: float = 2.0
    module_length: float = 4.0
    gap: float = 0.12
    thermal_band: tuple[float, float] = (150.0, 190.0)

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("row width must be positive")
        if self.length <= 0:
            raise ValueError("row endpoints coincide")

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.end, self.start)
        return d / np.linalg.norm(d)

    @property
    def normal(self) -> np.ndarray:
        d = self.direction
        return np.array([-d[1], d[0]])

    @property
    def n_modules(self) -> int:
        return int(math.ceil(self.length / (self.module_length + self.gap)))

    def line(self) -> LineParams:
        d = self.direction
        a = d[1] / d[0]
        return LineParams(float(a), float(self.start[1] - a * self.start[0]), Frame.WORLD)

    def signed_distance(self, x, y) -> float:
        return float(np.dot(np.subtract((x, y), self.start), self.normal))


@dataclass(frozen=True)
class GroundModel:
    # ground stays at least 45 grey levels below the coolest panel
    thermal_mean: float = 90.0
    thermal_amplitude: float = 15.0
    brown: tuple[float, float, float] = (125.0, 95.0, 65.0)
    green: tuple[float, float, float] = (85.0, 115.0, 60.0)
    # wavelengths of the low-frequency texture, metres
    wavelengths: tuple[float, ...] = (9.0, 14.0, 23.0)


@dataclass(frozen=True)
class PlantLayout:
    rows: tuple[PlantRow, ...]
    ground: GroundModel = field(default_factory=GroundModel)
    seed: int = 0
    thermal_speckle: float = 4.0
    rgb_noise: float = 5.0
    glare_coverage: float = 0.0
    panel_hue: tuple[float, float] = (210.0, 230.0)
    panel_saturation: tuple[float, float] = (140.0, 200.0)
    panel_value: tuple[float, float] = (110.0, 160.0)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ValueError("layout needs at least one row")
        if not 0 <= self.glare_coverage < 1:
            raise ValueError("glare_coverage must be in [0, 1)")

    def noiseless(self) -> "PlantLayout":
        return replace(self, thermal_speckle=0.0, rgb_noise=0.0)

    @property
    def centroid(self) -> np.ndarray:
        pts = np.array([p for r in self.rows for p in (r.start, r.end)], dtype=float)
        return pts.mean(axis=0)

    @cached_property
    def _modules(self):
        """Per-row, per-module thermal intensity and RGB colour."""
        tables = []
        for i, row in enumerate(self.rows):
            rng = np.random.default_rng([self.seed, 1, i])
            n = row.n_modules
            lo, hi = row.thermal_band
            intensity = rng.uniform(lo, hi, n)
            hsv = np.column_stack(
                (rng.uniform(*self.panel_hue, n), rng.uniform(*self.panel_saturation, n), rng.uniform(*self.panel_value, n))
            )
            colour = hsv_to_rgb(hsv[:, 0], hsv[:, 1], hsv[:, 2])
            tables.append((intensity, colour))
        return tables

    @cached_property
    def _ground_waves(self):
        rng = np.random.default_rng([self.seed, 2])
        waves = []
        for lam in self.ground.wavelengths:
            ang = rng.uniform(0, 2 * math.pi)
            k = 2 * math.pi / lam
            waves.append((k * math.cos(ang), k * math.sin(ang), rng.uniform(0, 2 * math.pi)))
        return waves

    @cached_property
    def _glare(self):
        """Per-row glare ellipses ``(along, across, semi_a, semi_b, angle)``."""
        out = []
        for i, row in enumerate(self.rows):
            if self.glare_coverage <= 0:
                out.append(np.zeros((0, 5)))
                continue
            rng = np.random.default_rng([self.seed, 3, i])
            mean_area = math.pi * 0.7 * 0.5
            n = int(round(self.glare_coverage * row.length * row.width / mean_area))
            out.append(
                np.column_stack(
                    (
                        rng.uniform(0, row.length, n),
                        rng.uniform(-row.width / 2, row.width / 2, n),
                        rng.uniform(0.4, 1.0, n),
                        rng.uniform(0.3, 0.7, n),
                        rng.uniform(0, math.pi, n),
                    )
                )
            )
        return out


def default_plant(seed=0, n_rows=4, length=60.0, spacing=6.0, width=2.0, **kw) -> PlantLayout:
    """Parallel rows along world x, ``spacing`` metres apart."""
    rows = tuple(PlantRow((0.0, i * spacing), (length, i * spacing), width=width) for i in range(n_rows))
    return PlantLayout(rows, seed=seed, **kw)


def mission_for(layout: PlantLayout) -> list[Waypoint]:
    """Exact boustrophedon waypoints on the row midline endpoints."""
    return boustrophedon([(r.start, r.end) for r in layout.rows])


@lru_cache(maxsize=8)
def _camera_axes(geom: ImageGeometry):
    """Camera-frame x of every image row and y of every image column."""
    xs, _ = pixels_to_camera(0.0, np.arange(geom.height) + 0.5, geom)
    _, ys = pixels_to_camera(np.arange(geom.width) + 0.5, 0.0, geom)
    return xs.astype(np.float32)[:, None], ys.astype(np.float32)[None, :]


def _footprint_radius(geom):
    return 0.5 * math.hypot(geom.width, geom.height) * geom.meters_per_pixel


class _Scene:
    """Per-row panel membership of every pixel for one camera pose.

    World coordinates are affine in the camera axes, so every per-pixel
    quantity is an outer sum of a column vector and a row vector.
    """

    def __init__(self, layout: PlantLayout, pose: Pose2D, geom: ImageGeometry):
        self.geom = replace(geom, z_g=pose.z_g) if pose.z_g != geom.z_g else geom
        self.xc, self.yc = _camera_axes(self.geom)
        self.pose = pose
        self.shape = (self.geom.height, self.geom.width)
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        self._rot = (c, s)
        radius = _footprint_radius(self.geom)
        self.rows = []
        for i, row in enumerate(layout.rows):
            if _segment_distance((pose.x, pose.y), row) > radius + row.width:
                continue
            window = self._pixel_window(row)
            if window is None:
                continue
            (v0, v1), (u0, u1) = window
            xc, yc = self.xc[v0:v1], self.yc[:, u0:u1]
            along = self.affine(row.direction, row.start, xc, yc)
            across = self.affine(row.normal, row.start, xc, yc)
            panel = (np.abs(across) <= row.width / 2) & (along >= 0) & (along <= row.length)
            rr, cc = np.nonzero(panel)
            if rr.size == 0:
                continue
            along_p = along[rr, cc]
            pitch = row.module_length + row.gap
            # along_p >= 0, so truncation is the floor
            module = np.minimum((along_p * np.float32(1.0 / pitch)).astype(np.intp), row.n_modules - 1)
            in_module = (along_p - module * pitch) < row.module_length
            self.rows.append((i, (rr + v0, cc + u0), module, in_module, along_p, across[rr, cc]))

    def _pixel_window(self, row):
        """Image rows/cols that can contain the row's rectangle, or None."""
        half = 0.5 * row.width * row.normal
        corners = np.array([row.start + half, row.start - half, row.end + half, row.end - half])
        x, y = world_to_camera(corners[:, 0], corners[:, 1], self.pose)
        u, v = camera_to_pixel(x, y, self.geom)
        u0, u1 = max(0, math.floor(u.min()) - 1), min(self.geom.width, math.ceil(u.max()) + 1)
        v0, v1 = max(0, math.floor(v.min()) - 1), min(self.geom.height, math.ceil(v.max()) + 1)
        if u0 >= u1 or v0 >= v1:
            return None
        return (v0, v1), (u0, u1)

    def affine(self, w, origin, xc=None, yc=None):
        """``w . (P - origin)`` for the world point ``P`` of every pixel."""
        xc = self.xc if xc is None else xc
        yc = self.yc if yc is None else yc
        c, s = self._rot
        k0 = w[0] * (self.pose.x - origin[0]) + w[1] * (self.pose.y - origin[1])
        kx = w[0] * c + w[1] * s
        ky = -w[0] * s + w[1] * c
        return (np.float32(k0) + np.float32(kx) * xc) + np.float32(ky) * yc

    def ground_field(self, layout: PlantLayout) -> np.ndarray:
        """Low-frequency ground texture in [-1, 1] (separable sine sum).

        sin(col + row) = sin(col)·cos(row) + cos(col)·sin(row), so the whole
        sum is one (H, 2n) x (2n, W) matrix product.
        """
        c, s = self._rot
        waves = np.asarray(layout._ground_waves, dtype=np.float64)
        kx, ky, ph = waves[:, 0], waves[:, 1], waves[:, 2]
        col = (kx * self.pose.x + ky * self.pose.y + ph) + (kx * c + ky * s) * self.xc.astype(np.float64)
        row = (-kx * s + ky * c)[:, None] * self.yc.astype(np.float64)
        left = np.hstack((np.sin(col), np.cos(col))).astype(np.float32)
        right = np.vstack((np.cos(row), np.sin(row))).astype(np.float32)
        acc = left @ right
        acc *= np.float32(1.0 / len(waves))
        return acc


def _segment_distance(p, row: PlantRow) -> float:
    rel = np.subtract(p, row.start)
    t = min(max(float(rel @ row.direction), 0.0), row.length)
    return float(np.linalg.norm(rel - t * row.direction))


def _frame_rng(seed, pose: Pose2D, channel: int):
    words = np.frombuffer(np.array([pose.x, pose.y, pose.theta, pose.z_g]).tobytes(), dtype=np.uint32)
    return np.random.default_rng([int(seed), channel, *map(int, words)])


_NOISE_MARGIN = 128


@lru_cache(maxsize=4)
def _noise_bank(seed, channel, shape):
    padded = (shape[0] + _NOISE_MARGIN, shape[1] + _NOISE_MARGIN, *shape[2:])
    bank = np.random.default_rng([int(seed), channel, 99]).standard_normal(padded, dtype=np.float32)
    bank.setflags(write=False)
    return bank


def _frame_noise(seed, pose: Pose2D, channel: int, shape) -> np.ndarray:
    """Unit Gaussian noise for one frame.

    A window at a pose-seeded offset into a per-seed bank, randomly flipped
    along each axis. Drawing a fresh field per frame costs more than the
    rest of the render.
    """
    rng = _frame_rng(seed, pose, channel)
    dv, du = rng.integers(0, _NOISE_MARGIN + 1, size=2)
    flip_v, flip_u = rng.integers(0, 2, size=2)
    window = np.ascontiguousarray(_noise_bank(seed, channel, shape)[dv : dv + shape[0], du : du + shape[1]])
    if flip_v or flip_u:
        # cv2 flip codes: 0 about the horizontal axis, 1 about the vertical, -1 both
        window = cv2.flip(window, -1 if flip_v and flip_u else (0 if flip_v else 1))
    return window


def render_thermal(layout: PlantLayout, pose: Pose2D, geom: ImageGeometry, seed=0) -> np.ndarray:
    scene = _Scene(layout, pose, geom)
    g = layout.ground
    img = g.thermal_mean + g.thermal_amplitude * scene.ground_field(layout)
    for i, idx, module, in_module, _, _ in scene.rows:
        intensity = layout._modules[i][0]
        sel = tuple(a[in_module] for a in idx)
        img[sel] = intensity[module[in_module]]
    if layout.thermal_speckle > 0:
        img = cv2.scaleAdd(_frame_noise(seed, pose, 0, scene.shape), float(layout.thermal_speckle), img)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_rgb(layout: PlantLayout, pose: Pose2D, geom: ImageGeometry, seed=0) -> np.ndarray:
    scene = _Scene(layout, pose, geom)
    g = layout.ground
    t = 0.5 * (scene.ground_field(layout) + 1.0)
    brown = np.asarray(g.brown, dtype=np.float32)
    diff = np.asarray(g.green, dtype=np.float32) - brown
    img = cv2.merge([t * diff[k] + brown[k] for k in range(3)])
    for i, idx, module, _, along, across in scene.rows:
        colour = layout._modules[i][1].astype(np.float32)
        px = colour[module]
        glare = layout._glare[i]
        if len(glare):
            near = glare[np.abs(glare[:, 0] - along.mean()) < (np.ptp(along) / 2 + 1.0)]
            hit = np.zeros(along.shape, dtype=bool)
            for ca, cx, sa, sb, ang in near:
                da, dx = along - ca, across - cx
                p = da * math.cos(ang) + dx * math.sin(ang)
                q = -da * math.sin(ang) + dx * math.cos(ang)
                hit |= (p / sa) ** 2 + (q / sb) ** 2 <= 1.0
            px[hit] = 0.15 * px[hit] + 0.85 * np.array([236.0, 239.0, 243.0], dtype=np.float32)
        img[idx] = px
    if layout.rgb_noise > 0:
        img = cv2.scaleAdd(_frame_noise(seed, pose, 1, img.shape), float(layout.rgb_noise), img)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def panel_mask(layout: PlantLayout, pose: Pose2D, geom: ImageGeometry, modality="thermal") -> np.ndarray:
    """Ground-truth panel pixels; thermal excludes the junction gaps."""
    scene = _Scene(layout, pose, geom)
    mask = np.zeros(scene.shape, dtype=bool)
    for _, idx, _, in_module, _, _ in scene.rows:
        if modality == "thermal":
            mask[tuple(a[in_module] for a in idx)] = True
        else:
            mask[idx] = True
    return mask


@dataclass(frozen=True)
class UavState:
    pose: Pose2D
    velocity: tuple[float, float] = (0.0, 0.0)
    # velocity-loop lag of a small multirotor; with the default follower gains
    # this keeps the cross-track response overdamped
    tau: float = 0.3
    max_speed: float = 2.0
    yaw_rate: float = math.radians(45.0)

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)

    @property
    def body_velocity(self) -> np.ndarray:
        c, s = math.cos(self.pose.theta), math.sin(self.pose.theta)
        vx, vy = self.velocity
        return np.array([c * vx + s * vy, -s * vx + c * vy])


def step_dynamics(s: UavState, cmd, dt: float, heading: float | None = None) -> UavState:
    """Advance the UAV by ``dt`` under a body-frame velocity command.

    Velocity follows the command with time constant ``tau``; yaw turns
    toward ``heading`` at no more than ``yaw_rate``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    c, sn = math.cos(s.pose.theta), math.sin(s.pose.theta)
    cx, cy = (cmd.vx, cmd.vy) if hasattr(cmd, "vx") else cmd
    target = np.array([c * cx - sn * cy, sn * cx + c * cy])
    v = np.asarray(s.velocity, dtype=float)
    v = v + (target - v) * min(1.0, dt / s.tau)
    speed = float(np.hypot(*v))
    if speed > s.max_speed:
        v *= s.max_speed / speed
    theta = s.pose.theta
    if heading is not None:
        dtheta = normalize_angle(heading - theta)
        limit = s.yaw_rate * dt
        theta += min(max(dtheta, -limit), limit)
    pose = Pose2D(s.pose.x + v[0] * dt, s.pose.y + v[1] * dt, theta, s.pose.z_g)
    return replace(s, pose=pose, velocity=(float(v[0]), float(v[1])))


@dataclass(frozen=True)
class GpsModel:
    bias: tuple[float, float] = (1.5, -1.0)
    walk_sigma: float = 0.01
    white_sigma: float = 0.02
    yaw_sigma: float = 0.0
    seed: int = 0

    @classmethod
    def perfect(cls):
        return cls(bias=(0.0, 0.0), walk_sigma=0.0, white_sigma=0.0, yaw_sigma=0.0)


class GpsSensor:
    """Stateful GPS receiver.

    The random walk lives on a fixed 0.1 s grid drawn from its own stream,
    so its value at time ``t`` does not depend on how often it is read.
    """

    GRID = 0.1

    def __init__(self, model: GpsModel):
        self.model = model
        self._walk_rng = np.random.default_rng([model.seed, 10])
        self._white_rng = np.random.default_rng([model.seed, 11])
        self._walk = np.zeros((1, 2))

    def walk(self, t: float) -> np.ndarray:
        if self.model.walk_sigma == 0:
            return np.zeros(2)
        k = t / self.GRID
        need = int(math.floor(k)) + 2
        if need > len(self._walk):
            n = max(need - len(self._walk), 1024)
            steps = self._walk_rng.standard_normal((n, 2)) * (self.model.walk_sigma * math.sqrt(self.GRID))
            self._walk = np.vstack((self._walk, self._walk[-1] + np.cumsum(steps, axis=0)))
        i = int(math.floor(k))
        frac = k - i
        return (1 - frac) * self._walk[i] + frac * self._walk[i + 1]

    def read(self, pose: Pose2D, t: float) -> Pose2D:
        m = self.model
        err = np.asarray(m.bias, dtype=float) + self.walk(t)
        if m.white_sigma > 0:
            err = err + self._white_rng.standard_normal(2) * m.white_sigma
        theta = pose.theta
        if m.yaw_sigma > 0:
            theta += float(self._white_rng.standard_normal()) * m.yaw_sigma
        return Pose2D(pose.x + err[0], pose.y + err[1], theta, pose.z_g)


def gps_read(pose: Pose2D, sensor: GpsSensor, t: float) -> Pose2D:
    return sensor.read(pose, t)


def inject_waypoint_error(waypoints, rototranslation=(0.0, 0.0, 0.0), sigma=0.0, seed=0, center=None):
    """Rigidly move all waypoints, then jitter each one independently.

    The rotation is about ``center`` (default: the waypoint centroid).
    """
    dx, dy, dtheta = rototranslation
    pts = np.array([[w.x, w.y] for w in waypoints], dtype=float)
    c0 = pts.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    c, s = math.cos(dtheta), math.sin(dtheta)
    rot = np.array([[c, -s], [s, c]])
    moved = (pts - c0) @ rot.T + c0 + np.array([dx, dy])
    if sigma > 0:
        moved = moved + np.random.default_rng([seed, 20]).standard_normal(moved.shape) * sigma
    return [replace(w, x=float(p[0]), y=float(p[1])) for w, p in zip(waypoints, moved)]
