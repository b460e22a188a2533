"""Visual PV row tracking for inspection UAVs.

Thermal and RGB row segmentation, automatic threshold tuning, an EKF on
the world-frame row midline, a carrot-chasing follower, the boustrophedon
mission logic, and a deterministic desk simulator to fly it all in.
"""

from .detection import FLIGHT_MAX_TILT, PanelSpec, RgbRowDetector, ThermalRowDetector, detect_rgb, detect_thermal
from .ekf import MidlineEKF, MidlineState, NoiseConfig, Observation, Sensor, gate, init_from_waypoints, jacobian_h, predict, update
from .errors import (
    ConfigError,
    DegenerateRegion,
    EmptyWindow,
    FrameMismatch,
    InvalidThresholds,
    MalformedMission,
    NearVerticalLine,
    NoIntersection,
    NoRegionsDetected,
    PVTrackError,
    ShapeMismatch,
    SingularObservation,
)
from .follower import CarrotConfig, VelocityCommand, carrot_target, cross_track_error, follow_step
from .geometry import (
    Frame,
    ImageGeometry,
    LineParams,
    PixelPoint,
    Pose2D,
    camera_line_to_world,
    camera_to_world,
    pixel_to_camera,
    world_line_to_camera,
    world_to_camera,
)
from .harness import CameraMode, ExperimentConfig, RunMetrics, Trace, compute_metrics, run_experiment
from .lines import ObservedLine, RegressionLine, clip_to_border, cluster_lines, fit_region_line
from .mission import Label, Mission, MissionConfig, Phase, Waypoint, validate_mission
from .rgb import HsvThresholds, segment_rgb, threshold_hsv, to_hsv
from .simulator import (
    GpsModel,
    GpsSensor,
    PlantLayout,
    PlantRow,
    UavState,
    default_plant,
    gps_read,
    inject_waypoint_error,
    render_rgb,
    render_thermal,
    step_dynamics,
)
from .thermal import Region, binarize_distance, distance_transform, extract_regions, threshold_band
from .tuning import CostBreakdown, ThresholdSet, ThresholdTuner, correlation_term, optimize_thresholds, segmentation_cost, shape_cost

__version__ = "0.1.0"
