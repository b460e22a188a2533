"""Extended Kalman filter for the world-frame PV midline ``m = (a, b)``.

The state is constant in ``W``; all non-linearity sits in the observation
model, which maps ``m`` into the camera frame given the UAV pose.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NearVerticalLine, SingularObservation
from .geometry import EPS_VERTICAL, Frame, LineParams, Pose2D, world_line_to_camera


class Sensor(str, enum.Enum):
    THERMAL = "thermal"
    RGB = "rgb"


@dataclass(frozen=True, eq=False)
class MidlineState:
    a: float
    b: float
    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.shape != (2, 2):
            raise ValueError("covariance must be 2x2")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.a, self.b])

    @property
    def line(self) -> LineParams:
        return LineParams(self.a, self.b, Frame.WORLD)

    def covariance_at(self, x0: float) -> np.ndarray:
        """Covariance of the slope and of the line's ``y`` at ``x = x0``."""
        J = np.array([[1.0, 0.0], [float(x0), 1.0]])
        return J @ self.P @ J.T

    def same_as(self, other: "MidlineState") -> bool:
        """Bitwise equality of mean and covariance."""
        return self.a == other.a and self.b == other.b and np.array_equal(self.P, other.P)


@dataclass(frozen=True)
class Observation:
    line: LineParams
    sensor: Sensor
    timestamp: float

    def __post_init__(self):
        self.line.require(Frame.CAMERA)
        object.__setattr__(self, "sensor", Sensor(self.sensor))


def _diag(*values):
    return np.diag(np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class NoiseConfig:
    """Process/measurement noise, gate and prior for the midline filter."""

    Q: np.ndarray = field(default_factory=lambda: 1e-8 * np.eye(2))
    R_thermal: np.ndarray = field(default_factory=lambda: _diag(4e-4, 1e-2))
    R_rgb: np.ndarray = field(default_factory=lambda: _diag(9e-4, 2e-2))
    # chi-square, 2 dof, 99%
    gate_threshold: float = 9.21
    P0: np.ndarray = field(default_factory=lambda: _diag(0.25, 4.0))

    def __post_init__(self):
        for name in ("Q", "R_thermal", "R_rgb", "P0"):
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != (2, 2) or not np.allclose(m, m.T):
                raise ValueError(f"{name} must be a symmetric 2x2 matrix")
            object.__setattr__(self, name, m)
        for name in ("R_thermal", "R_rgb", "P0"):
            if np.linalg.eigvalsh(getattr(self, name)).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        if np.linalg.eigvalsh(self.Q).min() < 0:
            raise ValueError("Q must be positive semidefinite")

    def R(self, sensor: Sensor) -> np.ndarray:
        return self.R_thermal if Sensor(sensor) is Sensor.THERMAL else self.R_rgb


@dataclass(frozen=True, eq=False)
class GateResult:
    accepted: bool
    innovation: np.ndarray
    mahalanobis: float


def init_from_waypoints(start, end, P0=None) -> MidlineState:
    """Line through the PV start and PV end waypoints, with prior ``P0``.

    ``P0`` is the uncertainty of the slope and of the line's ``y`` at the PV
    start, where the UAV waits for the filter to converge. It is carried
    over to ``(a, b)``, whose intercept sits at ``x = 0``: a slope error
    there would otherwise be amplified by the distance of the row from the
    world origin.
    """
    dx = end[0] - start[0]
    if abs(dx) < EPS_VERTICAL:
        raise NearVerticalLine("waypoints share the same x coordinate")
    a = (end[1] - start[1]) / dx
    b = start[1] - a * start[0]
    P0 = NoiseConfig().P0 if P0 is None else np.asarray(P0, dtype=float)
    # b = y_start - a * x_start
    J = np.array([[1.0, 0.0], [-float(start[0]), 1.0]])
    return MidlineState(a, b, J @ P0 @ J.T)


def predict(s: MidlineState, q) -> MidlineState:
    """Constant-state prediction: mean unchanged, ``P + Q``."""
    Q = q.Q if isinstance(q, NoiseConfig) else np.asarray(q, dtype=float)
    return MidlineState(s.a, s.b, s.P + Q)


def expected_observation(s: MidlineState, pose: Pose2D) -> np.ndarray:
    return world_line_to_camera(s.line, pose).as_array()


def jacobian_h(s: MidlineState, pose: Pose2D) -> np.ndarray:
    """Analytic Jacobian of the observation model w.r.t. ``(a, b)``."""
    c, sn = math.cos(pose.theta), math.sin(pose.theta)
    den = c + sn * s.a
    if abs(den) < 1e-12:
        raise SingularObservation("observation model is singular at this pose")
    num2 = pose.x * s.a + s.b - pose.y
    return np.array(
        [
            [1.0 / den**2, 0.0],
            [(pose.x * den - sn * num2) / den**2, 1.0 / den],
        ]
    )


def _innovation_cov(s, H, R):
    S = H @ s.P @ H.T + R
    if abs(np.linalg.det(S)) < 1e-300 or not np.isfinite(S).all():
        raise SingularObservation("innovation covariance is not invertible")
    return S


def gate(s: MidlineState, o: Observation, pose: Pose2D, noise: NoiseConfig) -> GateResult:
    """Mahalanobis test of ``o`` against the predicted observation."""
    nu = o.line.as_array() - expected_observation(s, pose)
    H = jacobian_h(s, pose)
    S = _innovation_cov(s, H, noise.R(o.sensor))
    d2 = float(nu @ np.linalg.solve(S, nu))
    return GateResult(d2 <= noise.gate_threshold, nu, d2)


def update(s: MidlineState, o: Observation, pose: Pose2D, noise: NoiseConfig) -> MidlineState:
    """Kalman correction with observation ``o`` taken at ``pose``.

    The covariance is propagated in Joseph form, algebraically equal to
    ``(I - K H) P`` but symmetric positive semidefinite by construction.
    """
    R = noise.R(o.sensor)
    H = jacobian_h(s, pose)
    S = _innovation_cov(s, H, R)
    nu = o.line.as_array() - expected_observation(s, pose)
    K = np.linalg.solve(S.T, (s.P @ H.T).T).T
    mean = s.mean + K @ nu
    IKH = np.eye(2) - K @ H
    P = IKH @ s.P @ IKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return MidlineState(float(mean[0]), float(mean[1]), P)


@dataclass
class FrameResult:
    observation: Observation
    gate: GateResult | None
    applied: bool


class MidlineEKF:
    """Single-owner filter fed with per-frame observation batches.

    Within a batch the observations closest to the prediction (in the
    Mahalanobis sense) are applied first, so once the tracked row has
    tightened the covariance, neighbouring parallel rows fail the gate.
    """

    def __init__(self, noise: NoiseConfig | None = None):
        self.noise = noise or NoiseConfig()
        self.state: MidlineState | None = None

    def reset(self, start, end) -> MidlineState:
        self.state = init_from_waypoints(start, end, self.noise.P0)
        return self.state

    def predict(self) -> MidlineState:
        self.state = predict(self.state, self.noise)
        return self.state

    def process(self, observations: Sequence[Observation], pose: Pose2D) -> list[FrameResult]:
        results = []
        pending = []
        for o in observations:
            try:
                pending.append((gate(self.state, o, pose, self.noise), o))
            except SingularObservation:
                results.append(FrameResult(o, None, False))
        pending.sort(key=lambda item: item[0].mahalanobis)
        updated = False
        for first_pass, o in pending:
            # the state moved: re-test against the corrected prediction
            g = gate(self.state, o, pose, self.noise) if updated else first_pass
            if g.accepted:
                self.state = update(self.state, o, pose, self.noise)
                updated = True
            results.append(FrameResult(o, g, g.accepted))
        return results
