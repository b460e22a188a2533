"""Waypoint missions and the hold / track / transit state machine.

Waypoints alternate PV start and PV end. Absolute waypoint positions may be
metres off; only offsets between neighbouring waypoints are trusted. When a
row ends, the remaining waypoints are shifted by the difference between
where the UAV actually finished (GPS) and the planned PV end, so the next PV
start is reached relative to the row just inspected.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import MalformedMission


class Label(str, enum.Enum):
    START = "start"
    END = "end"


class Phase(str, enum.Enum):
    HOLD = "hold"
    TRACK_ROW = "track"
    TRANSIT = "transit"
    DONE = "done"


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    label: Label
    row: int = 0

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


MIN_PAIR_SEPARATION = 1.0


def validate_mission(wps: Sequence[Waypoint]):
    """Raise :class:`MalformedMission` naming the first violated rule."""
    if len(wps) < 2 or len(wps) % 2:
        raise MalformedMission("count", f"need an even number (>= 2) of waypoints, got {len(wps)}")
    for i, wp in enumerate(wps):
        expected = Label.START if i % 2 == 0 else Label.END
        if wp.label is not expected:
            raise MalformedMission("alternation", f"waypoint {i} is {wp.label.value}, expected {expected.value}")
    for i in range(0, len(wps), 2):
        sep = math.dist((wps[i].x, wps[i].y), (wps[i + 1].x, wps[i + 1].y))
        if sep < MIN_PAIR_SEPARATION:
            raise MalformedMission("separation", f"row {i // 2}: start and end only {sep:.3f} m apart")


@dataclass(frozen=True)
class MissionConfig:
    arrival_radius: float = 1.0
    hold_threshold: float = 0.5
    hold_timeout: float = 60.0
    # TrackRow gives up after this long without an accepted observation
    track_timeout: float = 10.0
    # Hold also waits for the UAV to come to rest at the PV start, m/s
    settle_speed: float = 0.1


class DirectiveKind(str, enum.Enum):
    REINIT_EKF = "reinit_ekf"
    HOLD = "hold"
    TRACK = "track"
    TRANSIT = "transit"
    ROW_ABORTED = "row_aborted"
    DONE = "done"


@dataclass(frozen=True, eq=False)
class Directive:
    kind: DirectiveKind
    row: int
    target: np.ndarray | None = None
    start: np.ndarray | None = None
    end: np.ndarray | None = None
    reason: str = ""


@dataclass(frozen=True, eq=False)
class MissionState:
    phase: Phase
    row: int
    traveled: float = 0.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    phase_since: float = 0.0

    def with_phase(self, phase, t, **kw):
        return replace(self, phase=phase, phase_since=t, **kw)


class Mission:
    def __init__(self, waypoints: Sequence[Waypoint], config: MissionConfig | None = None):
        validate_mission(waypoints)
        self.waypoints = list(waypoints)
        self.config = config or MissionConfig()

    @property
    def n_rows(self) -> int:
        return len(self.waypoints) // 2

    def pair(self, row: int):
        return self.waypoints[2 * row], self.waypoints[2 * row + 1]

    def corrected_pair(self, row: int, offset):
        start, end = self.pair(row)
        return start.position + offset, end.position + offset

    def row_length(self, row: int) -> float:
        start, end = self.pair(row)
        return float(np.linalg.norm(end.position - start.position))

    def heading(self, row: int) -> float:
        start, end = self.pair(row)
        d = end.position - start.position
        return math.atan2(d[1], d[0])

    def _hold_directives(self, row, offset):
        start, end = self.corrected_pair(row, offset)
        return [
            Directive(DirectiveKind.REINIT_EKF, row, start=start, end=end),
            Directive(DirectiveKind.HOLD, row, target=start),
        ]

    def start(self, t=0.0):
        """Initial state: holding at the first PV start."""
        state = MissionState(Phase.HOLD, 0, phase_since=t)
        return state, self._hold_directives(0, state.offset)

    def step(self, state: MissionState, pose, ekf_state, t: float, since_accept: float = 0.0, speed: float = 0.0):
        """Advance the state machine with the current GPS pose and filter state.

        ``speed`` is the ground speed reported by the flight controller.
        Returns ``(new_state, directives)``.
        """
        cfg = self.config
        pos = np.array([pose.x, pose.y])
        row = state.row

        if state.phase is Phase.DONE:
            return state, []

        if state.phase is Phase.HOLD:
            start, _ = self.corrected_pair(row, state.offset)
            # judged where the UAV waits, not at the world origin
            spread = float(np.trace(ekf_state.covariance_at(start[0])))
            if spread < cfg.hold_threshold and speed <= cfg.settle_speed:
                return state.with_phase(Phase.TRACK_ROW, t, traveled=0.0), [
                    Directive(DirectiveKind.TRACK, row, start=start)
                ]
            if t - state.phase_since > cfg.hold_timeout:
                return self._leave_row(state, pos, t, aborted="filter did not converge while holding")
            return state, [Directive(DirectiveKind.HOLD, row, target=start)]

        if state.phase is Phase.TRACK_ROW:
            start, end = self.corrected_pair(row, state.offset)
            direction = (end - start) / np.linalg.norm(end - start)
            traveled = float((pos - start) @ direction)
            state = replace(state, traveled=traveled)
            if traveled >= self.row_length(row):
                return self._leave_row(state, pos, t)
            if since_accept > cfg.track_timeout:
                return self._leave_row(state, pos, t, aborted="no accepted observation")
            return state, [Directive(DirectiveKind.TRACK, row, start=start)]

        # transit toward the next PV start
        target, _ = self.corrected_pair(row, state.offset)
        if np.linalg.norm(target - pos) <= cfg.arrival_radius:
            return state.with_phase(Phase.HOLD, t), self._hold_directives(row, state.offset)
        return state, [Directive(DirectiveKind.TRANSIT, row, target=target)]

    def _leave_row(self, state, pos, t, aborted=""):
        row = state.row
        directives = []
        if aborted:
            directives.append(Directive(DirectiveKind.ROW_ABORTED, row, reason=aborted))
        if row + 1 >= self.n_rows:
            directives.append(Directive(DirectiveKind.DONE, row))
            return state.with_phase(Phase.DONE, t), directives
        _, planned_end = self.pair(row)
        # an aborted row did not reach its end, so it says nothing about the offset
        offset = state.offset if aborted else pos - planned_end.position
        nxt = row + 1
        target, _ = self.corrected_pair(nxt, offset)
        directives.append(Directive(DirectiveKind.TRANSIT, nxt, target=target))
        return state.with_phase(Phase.TRANSIT, t, row=nxt, offset=offset, traveled=0.0), directives


def boustrophedon(rows) -> list[Waypoint]:
    """Waypoints visiting ``rows`` (pairs of midline endpoints) back and forth."""
    wps = []
    for i, (p, q) in enumerate(rows):
        a, b = (p, q) if i % 2 == 0 else (q, p)
        wps.append(Waypoint(float(a[0]), float(a[1]), Label.START, i))
        wps.append(Waypoint(float(b[0]), float(b[1]), Label.END, i))
    return wps
