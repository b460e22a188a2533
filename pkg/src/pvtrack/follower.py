"""Carrot-chasing path follower acting on the midline expressed in frame C."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraPoint, Frame, LineParams


@dataclass(frozen=True)
class CarrotConfig:
    """Look-ahead, PID gains and speed limits.

    Gains may be scalars or ``(x, y)`` pairs in the camera frame.
    """

    lookahead: float = 3.0
    kp: float | tuple = 0.8
    ki: float | tuple = 0.02
    kd: float | tuple = 0.1
    max_speed: float = 2.0
    cruise_speed: float = 0.6
    # anti-windup bound on each integral component, m*s
    integral_limit: float = 1.0

    def __post_init__(self):
        if not self.lookahead > 0:
            raise ValueError("lookahead must be positive")
        if not self.max_speed >= self.cruise_speed > 0:
            raise ValueError("need max_speed >= cruise_speed > 0")


@dataclass(frozen=True)
class VelocityCommand:
    vx: float = 0.0
    vy: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy])


@dataclass(frozen=True, eq=False)
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(2))
    previous: np.ndarray | None = None


def cross_track_error(line_c: LineParams) -> float:
    """Signed distance of the camera origin from the reference line."""
    line_c.require(Frame.CAMERA)
    return -line_c.b / math.sqrt(line_c.a**2 + 1.0)


def path_vectors(line_c: LineParams):
    """Unit vectors parallel (pointing to +x) and perpendicular to the line.

    The perpendicular one is oriented so that ``e * perp`` leads from the
    camera origin to the foot of the perpendicular on the line.
    """
    norm = math.sqrt(line_c.a**2 + 1.0)
    parallel = np.array([1.0, line_c.a]) / norm
    perp = np.array([line_c.a, -1.0]) / norm
    return parallel, perp


def carrot_target(line_c: LineParams, e: float, cfg: CarrotConfig, lookahead=None, z_g=0.0) -> CameraPoint:
    L = cfg.lookahead if lookahead is None else lookahead
    parallel, perp = path_vectors(line_c)
    t = L * parallel + e * perp
    return CameraPoint(float(t[0]), float(t[1]), z_g)


def _clamp_norm(v, limit):
    n = float(np.hypot(v[0], v[1]))
    return v * (limit / n) if n > limit else v


def pid_velocity(error, cfg: CarrotConfig, dt: float, pid: PidState, integrated=None):
    """Plain PID on a 2-D displacement; returns ``(raw_output, new_state)``.

    ``integrated`` is the part of the error fed to the integrator (all of it
    by default).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    error = np.asarray(error, dtype=float)
    integrated = error if integrated is None else np.asarray(integrated, dtype=float)
    kp, ki, kd = (np.broadcast_to(np.asarray(g, dtype=float), (2,)) for g in (cfg.kp, cfg.ki, cfg.kd))
    integral = np.clip(pid.integral + integrated * dt, -cfg.integral_limit, cfg.integral_limit)
    derivative = np.zeros(2) if pid.previous is None else (error - pid.previous) / dt
    out = kp * error + ki * integral + kd * derivative
    return out, PidState(integral, error.copy())


def follow_step(line_c: LineParams, cfg: CarrotConfig, dt: float, pid: PidState | None = None):
    """One control period of phase-i path following.

    Returns ``(command, pid_state, cross_track_error)``. The along-track part
    of the PID output is capped at the cruise speed and the whole command at
    ``max_speed``.
    """
    pid = pid or PidState()
    e = cross_track_error(line_c)
    target = carrot_target(line_c, e, cfg)
    parallel, _ = path_vectors(line_c)
    # The cross-track error is not integrated: the airframe already turns a
    # velocity command into position, and a second integrator on e makes
    # every lateral correction overshoot the row.
    displacement = np.array([target.x, target.y])
    along_part = (displacement @ parallel) * parallel
    out, pid = pid_velocity(displacement, cfg, dt, pid, integrated=along_part)
    along = float(out @ parallel)
    lateral = out - along * parallel
    along = min(max(along, -cfg.cruise_speed), cfg.cruise_speed)
    v = _clamp_norm(along * parallel + lateral, cfg.max_speed)
    return VelocityCommand(float(v[0]), float(v[1])), pid, e


def goto_step(offset, cfg: CarrotConfig, dt: float, pid: PidState | None = None, speed=None):
    """PID toward a point ``offset`` metres away (frame C), speed-capped.

    Used for GPS-only transit and for station keeping while holding.
    """
    pid = pid or PidState()
    out, pid = pid_velocity(offset, cfg, dt, pid)
    v = _clamp_norm(out, cfg.cruise_speed if speed is None else speed)
    return VelocityCommand(float(v[0]), float(v[1])), pid
