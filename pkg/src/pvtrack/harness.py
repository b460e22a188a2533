"""Closed-loop experiments: simulator, cameras, filter, mission and follower.

One physics clock drives everything. Cameras fire on fixed tick divisors,
the controller on another; frames are rendered at the true pose while the
filter and controller only ever see GPS poses. Every control period appends
one row to the trace, and metrics are computed from the trace alone, so a
saved CSV reproduces the numbers of the run that wrote it.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .detection import FLIGHT_MAX_TILT, PanelSpec, RgbRowDetector, ThermalRowDetector
from .ekf import MidlineEKF, NoiseConfig, Observation, Sensor
from .errors import ConfigError, EmptyWindow, NearVerticalLine
from .follower import CarrotConfig, PidState, VelocityCommand, follow_step, goto_step
from .formats import layout_from_dict, mission_from_dict, read_json
from .geometry import ImageGeometry, Pose2D, world_line_to_camera, world_to_camera
from .mission import DirectiveKind, Mission, MissionConfig, Phase, Waypoint
from .simulator import (
    GpsModel,
    GpsSensor,
    PlantLayout,
    UavState,
    default_plant,
    inject_waypoint_error,
    mission_for,
    render_rgb,
    render_thermal,
    step_dynamics,
)
from .tuning import THRESHOLDS_SCHEMA, ThresholdSet

log = logging.getLogger(__name__)

TRACE_VERSION = "v1"
TRACE_COLUMNS = (
    "t",
    "phase",
    "row",
    "x",
    "y",
    "theta",
    "gps_x",
    "gps_y",
    "speed",
    "a_hat",
    "b_hat",
    "trace_p",
    "a_err",
    "b_err",
    "e",
    "xi",
    "cmd_vx",
    "cmd_vy",
    "frames",
    "observations",
    "accepted",
)
# fraction of the cruise speed that ends the start-of-row transient
SPEED_REACHED = 0.9


class CameraMode(str, enum.Enum):
    THERMAL = "thermal"
    RGB = "rgb"
    BOTH = "both"

    @property
    def uses_thermal(self) -> bool:
        return self is not CameraMode.RGB

    @property
    def uses_rgb(self) -> bool:
        return self is not CameraMode.THERMAL


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    camera_mode: CameraMode = CameraMode.BOTH
    layout: PlantLayout = field(default_factory=default_plant)
    # None flies the exact boustrophedon over the layout rows
    mission: tuple[Waypoint, ...] | None = None
    geometry: ImageGeometry = field(default_factory=ImageGeometry)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    carrot: CarrotConfig = field(default_factory=CarrotConfig)
    mission_config: MissionConfig = field(default_factory=MissionConfig)
    gps: GpsModel = field(default_factory=GpsModel)
    thresholds: ThresholdSet = field(default_factory=ThresholdSet)
    # rigid (dx, dy, dtheta) applied to all waypoints, then per-waypoint jitter
    waypoint_error: tuple[float, float, float] = (0.0, 0.0, 0.0)
    waypoint_sigma: float = 0.0
    speed: float = 0.6
    height: float = 15.0
    seed: int = 0
    physics_rate: int = 60
    control_every: int = 12
    thermal_every: int = 20
    rgb_every: int = 12
    max_time: float = 1200.0

    def __post_init__(self):
        object.__setattr__(self, "camera_mode", CameraMode(self.camera_mode))
        if self.mission is not None:
            object.__setattr__(self, "mission", tuple(self.mission))
        for name in ("physics_rate", "control_every", "thermal_every", "rgb_every"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not self.speed > 0 or not self.height > 0:
            raise ConfigError("speed and height must be positive")
        if self.speed > self.carrot.max_speed:
            raise ConfigError(f"speed {self.speed} exceeds max_speed {self.carrot.max_speed}")

    @property
    def camera_geometry(self) -> ImageGeometry:
        return self.geometry.at_height(self.height)

    @property
    def follower(self) -> CarrotConfig:
        return replace(self.carrot, cruise_speed=self.speed)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        """Build a config from its JSON form; file references are relative to ``base_dir``."""
        base = Path(base_dir)
        doc = dict(doc)
        schema = doc.pop("schema", "pvtrack.experiment/1")
        if schema != "pvtrack.experiment/1":
            raise ConfigError(f"unsupported experiment schema {schema!r}")

        def load(key):
            value = doc.pop(key, None)
            if isinstance(value, str):
                path = base / value
                if not path.exists():
                    raise ConfigError(f"{key} file not found: {path}")
                return read_json(path)
            return value

        kw = {}
        layout = load("layout")
        if layout is not None:
            kw["layout"] = layout_from_dict(layout)
        mission = load("mission")
        if mission is not None:
            kw["mission"] = tuple(mission_from_dict(mission))
        thresholds = load("thresholds")
        if thresholds is not None:
            if thresholds.get("schema") == THRESHOLDS_SCHEMA:
                thresholds = thresholds["thresholds"]
            kw["thresholds"] = ThresholdSet.from_dict(thresholds)
        nested = {
            "geometry": ImageGeometry,
            "carrot": CarrotConfig,
            "mission_config": MissionConfig,
            "gps": GpsModel,
        }
        for key, cls_ in nested.items():
            if key in doc:
                kw[key] = _build(cls_, doc.pop(key), key)
        if "noise" in doc:
            kw["noise"] = _build(NoiseConfig, doc.pop("noise"), "noise")
        if "waypoint_error" in doc:
            err = doc.pop("waypoint_error")
            kw["waypoint_error"] = (float(err.get("dx", 0.0)), float(err.get("dy", 0.0)),
                                    math.radians(float(err.get("dtheta_deg", 0.0))))
            kw["waypoint_sigma"] = float(err.get("sigma", 0.0))
        if doc.pop("perfect_sensors", False):
            kw["layout"] = kw.get("layout", default_plant()).noiseless()
            kw["gps"] = GpsModel.perfect()
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        kw.update(doc)
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {k: (np.array(v, dtype=float) if isinstance(v, list) and cls is NoiseConfig else
              tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass
class Trace:
    """Per-control-period log of a run plus the header metadata."""

    meta: dict
    columns: dict[str, list]

    @classmethod
    def empty(cls, **meta) -> "Trace":
        return cls(dict(meta), {c: [] for c in TRACE_COLUMNS})

    def append(self, **values):
        for c in TRACE_COLUMNS:
            self.columns[c].append(values[c])

    def __len__(self):
        return len(self.columns["t"])

    def column(self, name) -> np.ndarray:
        return np.asarray(self.columns[name])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            meta = " ".join(f"{k}={v}" for k, v in self.meta.items())
            fh.write(f"# pvtrack-trace {TRACE_VERSION} {meta}\n")
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for i in range(len(self)):
                writer.writerow([_fmt(self.columns[c][i]) for c in TRACE_COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "Trace":
        with open(path, newline="", encoding="utf-8") as fh:
            header = fh.readline().split()
            if header[:3] != ["#", "pvtrack-trace", TRACE_VERSION]:
                raise ConfigError(f"{path}: not a pvtrack {TRACE_VERSION} trace")
            meta = dict(item.split("=", 1) for item in header[3:])
            reader = csv.reader(fh)
            names = next(reader, None)
            if names is None or tuple(names) != TRACE_COLUMNS:
                raise ConfigError(f"{path}: unexpected trace columns")
            trace = cls(meta, {c: [] for c in TRACE_COLUMNS})
            for line_no, rec in enumerate(reader, start=3):
                if len(rec) != len(TRACE_COLUMNS):
                    raise ConfigError(f"{path}:{line_no}: expected {len(TRACE_COLUMNS)} fields")
                for c, v in zip(TRACE_COLUMNS, rec):
                    trace.columns[c].append(_parse(c, v))
        return trace


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _parse(column, text):
    if column == "phase":
        return Phase(text).value
    if column in ("row", "frames", "observations", "accepted"):
        return int(text)
    return float(text)


@dataclass(frozen=True)
class RowMetrics:
    row: int
    mu_e: float
    sigma_e: float
    rmse: float
    samples: int


@dataclass(frozen=True)
class RunMetrics:
    """Control and navigation error over the in-window samples.

    ``mu_e`` and ``sigma_e`` describe the magnitude of the control error
    (distance to the estimated midline); ``rmse`` is over the signed
    distance to the true midline.
    """

    mu_e: float
    sigma_e: float
    rmse: float
    samples: int
    rows: tuple[RowMetrics, ...]
    rows_completed: int = 0
    rows_aborted: int = 0
    sim_time: float = 0.0
    wall_time: float = 0.0
    # in-window samples per phase; anything but TrackRow would be a bug
    phase_counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        """Everything except the wall-clock time."""
        d = self.as_dict()
        d.pop("wall_time")
        return d


def _mean_std(values):
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def _rmse(values):
    return math.sqrt(math.fsum(v * v for v in values) / len(values))


def window_mask(trace: Trace, cruise_speed: float | None = None) -> np.ndarray:
    """Samples that count toward the metrics.

    TrackRow samples of each row, from the first one at which the true
    speed has reached the cruise speed (within 10%) to the end of the row.
    """
    if cruise_speed is None:
        cruise_speed = float(trace.meta.get("cruise_speed", "nan"))
    if not cruise_speed > 0:
        raise ConfigError("trace has no cruise_speed; pass it explicitly")
    phase = trace.columns["phase"]
    rows = trace.columns["row"]
    speed = trace.columns["speed"]
    mask = np.zeros(len(trace), dtype=bool)
    reached = set()
    for i in range(len(trace)):
        if phase[i] != Phase.TRACK_ROW.value:
            continue
        # a row visited twice (never happens in one mission) would share the flag
        if rows[i] not in reached and speed[i] >= SPEED_REACHED * cruise_speed:
            reached.add(rows[i])
        mask[i] = rows[i] in reached
    return mask


def compute_metrics(trace: Trace, cruise_speed: float | None = None) -> RunMetrics:
    mask = window_mask(trace, cruise_speed)
    if not mask.any():
        raise EmptyWindow("no TrackRow samples after the speed transient")
    idx = np.flatnonzero(mask)
    e = trace.columns["e"]
    xi = trace.columns["xi"]
    rows = trace.columns["row"]
    phase = trace.columns["phase"]

    mu, sigma = _mean_std([abs(e[i]) for i in idx])
    per_row = []
    for r in sorted({rows[i] for i in idx}):
        sel = [i for i in idx if rows[i] == r]
        m, s = _mean_std([abs(e[i]) for i in sel])
        per_row.append(RowMetrics(int(r), m, s, _rmse([xi[i] for i in sel]), len(sel)))
    counts = {}
    for i in idx:
        counts[phase[i]] = counts.get(phase[i], 0) + 1
    meta = trace.meta
    return RunMetrics(
        mu_e=mu,
        sigma_e=sigma,
        rmse=_rmse([xi[i] for i in idx]),
        samples=int(idx.size),
        rows=tuple(per_row),
        rows_completed=int(meta.get("rows_completed", 0)),
        rows_aborted=int(meta.get("rows_aborted", 0)),
        sim_time=float(meta.get("sim_time", 0.0)),
        wall_time=float(meta.get("wall_time", 0.0)),
        phase_counts=counts,
    )


@dataclass
class ExperimentResult:
    metrics: RunMetrics
    trace: Trace
    events: list = field(default_factory=list)
    frames: int = 0


def _subsystem_seeds(seed: int):
    render, gps, waypoints = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(int(s.generate_state(1)[0]) for s in (render, gps, waypoints))


def _assign_rows(layout: PlantLayout, waypoints: Sequence[Waypoint]) -> list[int]:
    """Layout row each mission row is meant to inspect (nearest to its planned midpoint)."""
    out = []
    for i in range(0, len(waypoints), 2):
        mid = 0.5 * (waypoints[i].position + waypoints[i + 1].position)
        dist = [abs(r.signed_distance(*mid)) for r in layout.rows]
        out.append(int(np.argmin(dist)))
    return out


def _heading_along(a: float, direction: float) -> float:
    """Heading of a line with slope ``a``, pointing within 90 degrees of ``direction``."""
    h = math.atan(a)
    if math.cos(h - direction) < 0:
        h += math.pi
    return h


class _Loop:
    """Mutable state of one run; :func:`run_experiment` is the public entry."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.geom = cfg.camera_geometry
        self.layout = cfg.layout
        self.render_seed, gps_seed, wp_seed = _subsystem_seeds(cfg.seed)
        self.gps = GpsSensor(replace(cfg.gps, seed=gps_seed))
        planned = list(cfg.mission) if cfg.mission is not None else mission_for(cfg.layout)
        self.true_rows = _assign_rows(cfg.layout, planned)
        flown = planned
        if any(cfg.waypoint_error) or cfg.waypoint_sigma > 0:
            flown = inject_waypoint_error(planned, cfg.waypoint_error, cfg.waypoint_sigma, wp_seed, cfg.layout.centroid)
        self.mission = Mission(flown, cfg.mission_config)
        self.follower = cfg.follower
        self.ekf = MidlineEKF(cfg.noise)
        row0 = cfg.layout.rows[0]
        panel = PanelSpec(width=row0.width, module_length=row0.module_length)
        th = cfg.thresholds
        self.detectors = {}
        if cfg.camera_mode.uses_thermal:
            self.detectors[Sensor.THERMAL] = ThermalRowDetector(
                th.th1, th.th2, th.th3, max_tilt=FLIGHT_MAX_TILT, geometry=self.geom, panel=panel
            ).fit()
        if cfg.camera_mode.uses_rgb:
            self.detectors[Sensor.RGB] = RgbRowDetector(
                *th.hsv.as_tuple(), hue_wrap=th.hue_wrap, max_tilt=FLIGHT_MAX_TILT, geometry=self.geom, panel=panel
            ).fit()
        start = flown[0]
        self.uav = UavState(
            Pose2D(start.x, start.y, self.mission.heading(0), cfg.height), max_speed=cfg.carrot.max_speed
        )
        self.events = []
        self.frames = 0
        self.counts = [0, 0, 0]  # frames, observations, accepted since the last control step
        self.last_accept = 0.0
        self.pid = PidState()
        self.cmd = VelocityCommand()
        self.heading = self.uav.pose.theta
        self.e = math.nan
        self.targets = {}

    def capture(self, sensor: Sensor, t: float):
        render = render_thermal if sensor is Sensor.THERMAL else render_rgb
        img = render(self.layout, self.uav.pose, self.geom, self.render_seed)
        gps_pose = self.gps.read(self.uav.pose, t)
        observations = []
        for line in self.detectors[sensor].predict(img):
            try:
                observations.append(Observation(line.to_camera_line(self.geom), sensor, t))
            except NearVerticalLine:
                continue
        self.ekf.predict()
        results = self.ekf.process(observations, gps_pose)
        accepted = sum(r.applied for r in results)
        if accepted:
            self.last_accept = t
        self.frames += 1
        self.counts[0] += 1
        self.counts[1] += len(observations)
        self.counts[2] += accepted

    def apply(self, directives, t):
        for d in directives:
            if d.kind is DirectiveKind.REINIT_EKF:
                self.ekf.reset(d.start, d.end)
                self.last_accept = t
            elif d.kind is DirectiveKind.ROW_ABORTED:
                self.events.append((t, "row_aborted", d.row, d.reason))
                log.warning("row %d aborted at t=%.1f: %s", d.row, t, d.reason)
            elif d.kind is DirectiveKind.DONE:
                self.events.append((t, "done", d.row, ""))
            self.targets[d.kind] = d

    def control(self, phase: Phase, gps_pose: Pose2D, state_row: int):
        cfg = self.follower
        dt = self.cfg.control_every / self.cfg.physics_rate
        self.e = math.nan
        if phase is Phase.TRACK_ROW:
            line_c = world_line_to_camera(self.ekf.state.line, gps_pose)
            self.cmd, self.pid, self.e = follow_step(line_c, cfg, dt, self.pid)
            self.heading = _heading_along(self.ekf.state.a, self.mission.heading(state_row))
        elif phase in (Phase.HOLD, Phase.TRANSIT):
            kind = DirectiveKind.HOLD if phase is Phase.HOLD else DirectiveKind.TRANSIT
            target = self.targets[kind].target
            offset = world_to_camera(target[0], target[1], gps_pose)
            self.cmd, self.pid = goto_step(offset, cfg, dt, self.pid, speed=cfg.cruise_speed)
            self.heading = self.mission.heading(state_row)
        else:
            self.cmd = VelocityCommand()

    def run(self) -> ExperimentResult:
        cfg = self.cfg
        wall0 = time.perf_counter()
        dt = 1.0 / cfg.physics_rate
        trace = Trace.empty(
            cruise_speed=cfg.speed, camera_mode=cfg.camera_mode.value, seed=cfg.seed, height=cfg.height
        )
        mstate, directives = self.mission.start(0.0)
        self.apply(directives, 0.0)
        max_ticks = int(round(cfg.max_time * cfg.physics_rate))
        completed = 0
        t = 0.0
        for tick in range(max_ticks + 1):
            t = tick * dt
            if mstate.phase in (Phase.HOLD, Phase.TRACK_ROW):
                if Sensor.THERMAL in self.detectors and tick % cfg.thermal_every == 0:
                    self.capture(Sensor.THERMAL, t)
                if Sensor.RGB in self.detectors and tick % cfg.rgb_every == 0:
                    self.capture(Sensor.RGB, t)
            if tick % cfg.control_every == 0:
                gps_pose = self.gps.read(self.uav.pose, t)
                previous = mstate
                mstate, directives = self.mission.step(
                    mstate, gps_pose, self.ekf.state, t, t - self.last_accept, self.uav.speed
                )
                self.apply(directives, t)
                if previous.phase is Phase.TRACK_ROW and mstate.phase is not Phase.TRACK_ROW:
                    aborted = any(d.kind is DirectiveKind.ROW_ABORTED for d in directives)
                    completed += 0 if aborted else 1
                if mstate.phase is not previous.phase:
                    self.pid = PidState()
                    log.debug("t=%.2f phase %s -> %s (row %d)", t, previous.phase.value, mstate.phase.value, mstate.row)
                if mstate.phase is Phase.DONE:
                    break
                self.control(mstate.phase, gps_pose, mstate.row)
                self.log_sample(trace, t, mstate, gps_pose)
            self.uav = step_dynamics(self.uav, self.cmd, dt, self.heading)
        else:
            self.events.append((t, "timeout", mstate.row, f"mission not finished after {cfg.max_time} s"))
            log.warning("mission not finished after %.0f s", cfg.max_time)

        aborted = sum(1 for ev in self.events if ev[1] == "row_aborted")
        trace.meta.update(
            rows_completed=completed,
            rows_aborted=aborted,
            sim_time=repr(t),
            wall_time=repr(time.perf_counter() - wall0),
            frames=self.frames,
        )
        metrics = compute_metrics(trace, cfg.speed)
        return ExperimentResult(metrics, trace, self.events, self.frames)

    def log_sample(self, trace: Trace, t, mstate, gps_pose):
        pose = self.uav.pose
        true_row = self.layout.rows[self.true_rows[mstate.row]]
        truth = true_row.line()
        s = self.ekf.state
        trace.append(
            t=t,
            phase=mstate.phase.value,
            row=mstate.row,
            x=pose.x,
            y=pose.y,
            theta=pose.theta,
            gps_x=gps_pose.x,
            gps_y=gps_pose.y,
            speed=self.uav.speed,
            a_hat=s.a,
            b_hat=s.b,
            trace_p=float(np.trace(s.P)),
            a_err=s.a - truth.a,
            b_err=s.b - truth.b,
            e=self.e,
            xi=true_row.signed_distance(pose.x, pose.y),
            cmd_vx=self.cmd.vx,
            cmd_vy=self.cmd.vy,
            frames=self.counts[0],
            observations=self.counts[1],
            accepted=self.counts[2],
        )
        self.counts = [0, 0, 0]


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Fly one mission. With ``out_dir`` the trace and metrics are written there."""
    result = _Loop(cfg).run()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.trace.write_csv(out / "trace.csv")
        (out / "metrics.json").write_text(json.dumps(result.metrics.as_dict(), indent=2) + "\n", encoding="utf-8")
    return result
