"""Automatic selection of the nine segmentation thresholds.

Segmentation quality is scored per region: how rectangular it is, how well
it lines up with the flight direction, how close its area is to a PV module
(thermal) or a row crossing the frame (RGB), and how much of it the other
camera also marks as panel. Lower cost is better; every region contributes
a non-positive amount, so an empty segmentation scores 0.

The nine thresholds are tuned in two stages. RGB thresholds go first, on
shape terms alone, then the thermal thresholds on shape plus overlap with
the frozen RGB mask.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import ConvexHull
from sklearn.base import BaseEstimator

from .detection import PanelSpec, RgbRowDetector, ThermalRowDetector
from .errors import InvalidThresholds, NoRegionsDetected, ShapeMismatch
from .geometry import ImageGeometry
from .lines import fit_points
from .rgb import HsvThresholds, threshold_hsv, to_hsv
from .thermal import Region, extract_regions, segment_thermal
from .validation import check_rgb_image, check_same_raster, check_thermal_image

log = logging.getLogger(__name__)

THERMAL_NAMES = ("th1", "th2", "th3")
RGB_NAMES = ("th4", "th5", "th6", "th7", "th8", "th9")
NAMES = THERMAL_NAMES + RGB_NAMES

THRESHOLDS_SCHEMA = "pvtrack.thresholds/1"

DEFAULT_BOUNDS = {
    "th1": (0.0, 255.0),
    "th2": (0.0, 255.0),
    "th3": (0.5, 30.0),
    "th4": (0.0, 360.0),
    "th5": (0.0, 255.0),
    "th6": (0.0, 255.0),
    "th7": (0.0, 360.0),
    "th8": (0.0, 255.0),
    "th9": (0.0, 255.0),
}

# evaluation grid: the cost only changes at integer grey levels, and th3 is
# compared against distances that are square roots of integers
_RESOLUTION = {name: 1.0 for name in NAMES} | {"th3": 0.1}
_INITIAL_STEP = {name: 16.0 for name in NAMES} | {"th3": 2.0, "th4": 20.0, "th7": 20.0}


@dataclass(frozen=True)
class ThresholdSet:
    """All nine thresholds plus the box they are allowed to move in."""

    th1: float = 140.0
    th2: float = 200.0
    th3: float = 3.0
    th4: float = 190.0
    th5: float = 60.0
    th6: float = 40.0
    th7: float = 250.0
    th8: float = 255.0
    th9: float = 230.0
    hue_wrap: bool = False
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "bounds", {**DEFAULT_BOUNDS, **dict(self.bounds)})
        for name in NAMES:
            lo, hi = self.bounds[name]
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise InvalidThresholds(f"{name}={value} outside bounds [{lo}, {hi}]")
        if not self.th1 < self.th2:
            raise InvalidThresholds(f"need th1 < th2, got {self.th1}, {self.th2}")
        if not self.th3 > 0:
            raise InvalidThresholds(f"th3 must be positive, got {self.th3}")
        self.hsv  # HSV ordering checks

    @property
    def hsv(self) -> HsvThresholds:
        return HsvThresholds(self.th4, self.th5, self.th6, self.th7, self.th8, self.th9, self.hue_wrap)

    @property
    def thermal(self) -> tuple[float, float, float]:
        return (self.th1, self.th2, self.th3)

    def as_vector(self, names=NAMES) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)

    def with_values(self, names, values) -> "ThresholdSet":
        return replace(self, **{n: float(v) for n, v in zip(names, values)})

    def perturbed(self, delta, rng=None) -> "ThresholdSet":
        """Every threshold moved by ``delta`` with a random sign, clipped into bounds.

        Pairs that would cross (th1/th2, th4/th7 ...) keep their original
        order by moving both bounds outward instead.
        """
        rng = np.random.default_rng(rng)
        signs = rng.choice((-1.0, 1.0), size=len(NAMES))
        values = {}
        for name, sgn in zip(NAMES, signs):
            lo, hi = self.bounds[name]
            values[name] = float(np.clip(getattr(self, name) + sgn * delta, lo, hi))
        for low, high in (("th1", "th2"), ("th4", "th7"), ("th5", "th8"), ("th6", "th9")):
            if values[low] >= values[high]:
                values[low] = max(self.bounds[low][0], getattr(self, low) - delta)
                values[high] = min(self.bounds[high][1], getattr(self, high) + delta)
        values["th3"] = max(values["th3"], self.bounds["th3"][0])
        return replace(self, **values)

    def to_dict(self) -> dict:
        out = {n: getattr(self, n) for n in NAMES}
        out["hue_wrap"] = self.hue_wrap
        out["bounds"] = {n: list(b) for n, b in self.bounds.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdSet":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidThresholds(f"unknown threshold fields: {sorted(unknown)}")
        kw = dict(data)
        if "bounds" in kw:
            kw["bounds"] = {n: tuple(map(float, b)) for n, b in kw["bounds"].items()}
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    """Per-region terms of the segmentation cost."""

    thermal_shape: np.ndarray
    thermal_overlap: np.ndarray
    rgb_shape: np.ndarray
    rgb_overlap: np.ndarray

    @property
    def n_thermal(self) -> int:
        return int(self.thermal_shape.size)

    @property
    def n_rgb(self) -> int:
        return int(self.rgb_shape.size)

    @property
    def thermal_cost(self) -> float:
        return -float(np.sum(self.thermal_shape) + np.sum(self.thermal_overlap))

    @property
    def rgb_cost(self) -> float:
        return -float(np.sum(self.rgb_shape) + np.sum(self.rgb_overlap))

    @property
    def total(self) -> float:
        return self.thermal_cost + self.rgb_cost

    def summary(self) -> dict:
        return {
            "total": self.total,
            "thermal_cost": self.thermal_cost,
            "rgb_cost": self.rgb_cost,
            "n_thermal": self.n_thermal,
            "n_rgb": self.n_rgb,
        }


@dataclass(frozen=True)
class ShapeWeights:
    rectangularity: float = 1.0 / 3.0
    alignment: float = 1.0 / 3.0
    area: float = 1.0 / 3.0

    def __post_init__(self):
        w = (self.rectangularity, self.alignment, self.area)
        if min(w) < 0 or not math.isclose(sum(w), 1.0, abs_tol=1e-9):
            raise ValueError("shape weights must be non-negative and sum to 1")


def _row_corners(region: Region) -> np.ndarray:
    """Corners of the leftmost and rightmost pixel of every image row.

    Their convex hull equals the hull of all pixel squares of the region.
    """
    rows, cols = region.rows, region.cols
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    ends = np.r_[starts[1:], rows.size] - 1
    r = rows[starts].astype(float)
    left = cols[starts].astype(float)
    right = cols[ends].astype(float) + 1.0
    return np.concatenate(
        [np.column_stack((left, r)), np.column_stack((left, r + 1)), np.column_stack((right, r)), np.column_stack((right, r + 1))]
    )


def min_area_rectangle(points) -> float:
    """Area of the smallest rectangle (any orientation) enclosing ``points``.

    One side of the optimal rectangle is collinear with a hull edge, so each
    edge direction is tried.
    """
    pts = np.asarray(points, dtype=float)
    hull = pts[ConvexHull(pts).vertices]
    edges = np.roll(hull, -1, axis=0) - hull
    edges /= np.hypot(edges[:, 0], edges[:, 1])[:, None]
    normals = np.column_stack((-edges[:, 1], edges[:, 0]))
    along = hull @ edges.T
    across = hull @ normals.T
    areas = np.ptp(along, axis=0) * np.ptp(across, axis=0)
    return float(areas.min())


def rectangularity(region: Region) -> float:
    return min(1.0, region.area / min_area_rectangle(_row_corners(region)))


def alignment(region: Region, heading: float = 0.0) -> float:
    """cos^2 of the angle between the region's main axis and ``heading``.

    ``heading`` is measured in the image plane from the forward direction
    (towards decreasing row index), positive towards increasing column.
    """
    if region.area < 2:
        return 0.0
    axis = fit_points(region.points).direction
    forward = np.array([math.sin(heading), -math.cos(heading)])
    return float(np.dot(axis, forward) ** 2)


def area_match(area: float, expected_area: float) -> float:
    return math.exp(-((area / expected_area - 1.0) ** 2))


def shape_cost(region: Region, expected_area: float, heading: float = 0.0, weights: ShapeWeights | None = None) -> float:
    """Shape quality of one region in ``[0, 1]``; 1 is a perfect, aligned, right-sized rectangle."""
    if not expected_area > 0:
        raise ValueError("expected_area must be positive")
    w = weights or ShapeWeights()
    return (
        w.rectangularity * rectangularity(region)
        + w.alignment * alignment(region, heading)
        + w.area * area_match(region.area, expected_area)
    )


def correlation_term(region: Region, other) -> float:
    """Fraction of ``region`` pixels that are set in the other camera's mask."""
    other = np.asarray(other)
    if other.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got shape {other.shape}")
    if region.area and (region.rows.max() >= other.shape[0] or region.cols.max() >= other.shape[1]):
        raise ShapeMismatch(f"region does not fit in a {other.shape} mask")
    if region.area == 0:
        return 0.0
    return float(np.count_nonzero(other[region.rows, region.cols]) / region.area)


class _Problem:
    """One image pair with everything that does not depend on thresholds precomputed."""

    def __init__(self, thermal, rgb, geometry=None, panel=None, heading=0.0, weights=None):
        self.thermal = check_thermal_image(thermal)
        rgb = check_rgb_image(rgb)
        check_same_raster(self.thermal, rgb)
        self.hsv = to_hsv(rgb)
        V, U = self.thermal.shape
        self.geometry = geometry or ImageGeometry(width=U, height=V)
        if (self.geometry.height, self.geometry.width) != (V, U):
            raise ShapeMismatch(f"images are {U}x{V}, geometry is {self.geometry.width}x{self.geometry.height}")
        self.panel = panel or PanelSpec()
        self.heading = heading
        self.weights = weights or ShapeWeights()
        self.min_area = max(1, int(0.25 * self.panel.module_area_px(self.geometry)))
        self.thermal_area = self.panel.module_area_px(self.geometry)
        self.rgb_area = self.panel.row_area_px(self.geometry)
        self.evaluations = 0

    def thermal_mask(self, th: ThresholdSet):
        return segment_thermal(self.thermal, th.th1, th.th2, th.th3)

    def rgb_mask(self, th: ThresholdSet):
        return threshold_hsv(self.hsv, th.hsv)

    def _shapes(self, regions, expected):
        return np.array([shape_cost(r, expected, self.heading, self.weights) for r in regions])

    def rgb_terms(self, th, thermal_mask=None):
        mask = self.rgb_mask(th)
        regions = extract_regions(mask, self.min_area)
        shape = self._shapes(regions, self.rgb_area)
        overlap = np.array([correlation_term(r, thermal_mask) for r in regions]) if thermal_mask is not None else None
        return mask, shape, overlap

    def thermal_terms(self, th, rgb_mask):
        mask = self.thermal_mask(th)
        regions = extract_regions(mask, self.min_area)
        shape = self._shapes(regions, self.thermal_area)
        overlap = np.array([correlation_term(r, rgb_mask) for r in regions])
        return mask, shape, overlap

    def breakdown(self, th: ThresholdSet) -> CostBreakdown:
        rgb_mask = self.rgb_mask(th)
        thermal_mask, t_shape, t_overlap = self.thermal_terms(th, rgb_mask)
        _, r_shape, r_overlap = self.rgb_terms(th, thermal_mask)
        return CostBreakdown(t_shape, t_overlap, r_shape, r_overlap)

    # stage objectives; infeasible threshold combinations score +inf
    def rgb_stage_cost(self, th) -> float:
        self.evaluations += 1
        return -float(np.sum(self.rgb_terms(th)[1]))

    def thermal_stage_cost(self, th, rgb_mask) -> float:
        self.evaluations += 1
        _, shape, overlap = self.thermal_terms(th, rgb_mask)
        return -float(np.sum(shape) + np.sum(overlap))


def segmentation_cost(thermal, rgb, th: ThresholdSet, geometry=None, panel=None, heading=0.0) -> CostBreakdown:
    """Full two-camera segmentation cost of ``th`` on one image pair."""
    return _Problem(thermal, rgb, geometry, panel, heading).breakdown(th)


def _snap(th: ThresholdSet, names, x):
    """Round each coordinate to its evaluation grid; None when infeasible."""
    values = [round(v / _RESOLUTION[n]) * _RESOLUTION[n] for n, v in zip(names, x)]
    try:
        return th.with_values(names, values)
    except InvalidThresholds:
        return None


def _coordinate_descent(objective, start: ThresholdSet, names, max_evaluations=400):
    """Bounded pattern search along each coordinate with a halving step.

    Only strict improvements are accepted, so the result never scores worse
    than ``start``.
    """
    best, best_cost = start, objective(start)
    steps = {n: _INITIAL_STEP[n] for n in names}
    used = 1
    while used < max_evaluations and any(steps[n] >= _RESOLUTION[n] for n in names):
        improved = False
        for i, name in enumerate(names):
            if steps[name] < _RESOLUTION[name]:
                continue
            for sign in (1.0, -1.0):
                lo, hi = start.bounds[name]
                x = best.as_vector(names)
                x[i] = min(max(x[i] + sign * steps[name], lo), hi)
                cand = _snap(best, names, x)
                if cand is None or cand == best:
                    continue
                cost = objective(cand)
                used += 1
                if cost < best_cost:
                    best, best_cost, improved = cand, cost, True
                    break
        if not improved:
            for name in names:
                steps[name] /= 2.0
    return best, best_cost


def _lbfgsb(objective, start: ThresholdSet, names, max_evaluations=400):
    """Finite-difference L-BFGS-B on the snapped cost.

    The cost is piecewise constant, so the difference step is the coordinate
    step of the pattern search rather than a tiny epsilon.
    """
    scale = np.array([_INITIAL_STEP[n] for n in names])
    lo = np.array([start.bounds[n][0] for n in names]) / scale
    hi = np.array([start.bounds[n][1] for n in names]) / scale
    cache = {}

    def fun(z):
        cand = _snap(start, names, z * scale)
        if cand is None:
            return 1.0
        key = tuple(cand.as_vector(names))
        if key not in cache:
            cache[key] = (objective(cand), cand)
        return cache[key][0]

    start_cost = fun(start.as_vector(names) / scale)
    minimize(
        fun,
        start.as_vector(names) / scale,
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
        options={"eps": 0.5, "maxfun": max_evaluations},
    )
    cost, best = min(cache.values(), key=lambda item: item[0])
    if cost < start_cost:
        return best, cost
    return start, start_cost


_METHODS = {"coordinate": _coordinate_descent, "lbfgsb": _lbfgsb}


@dataclass(frozen=True, eq=False)
class TuningResult:
    thresholds: ThresholdSet
    cost: CostBreakdown
    initial_cost: CostBreakdown
    elapsed: float
    evaluations: int


def optimize_thresholds(
    thermal,
    rgb,
    init: ThresholdSet | None = None,
    geometry: ImageGeometry | None = None,
    panel: PanelSpec | None = None,
    method: str = "coordinate",
    max_evaluations: int = 400,
    heading: float = 0.0,
) -> TuningResult:
    """Tune all thresholds on one registered thermal/RGB pair.

    Stage one tunes th4-th9 on the RGB shape terms alone. Stage two tunes
    th1-th3 on thermal shape plus overlap with the stage-one RGB mask. If
    the staged result scores worse than ``init`` on the full cost, ``init``
    is returned.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(_METHODS)}")
    t0 = time.perf_counter()
    init = init or ThresholdSet()
    search = _METHODS[method]
    problem = _Problem(thermal, rgb, geometry, panel, heading)
    initial = problem.breakdown(init)

    stage1, c1 = search(problem.rgb_stage_cost, init, RGB_NAMES, max_evaluations)
    log.info("rgb stage: cost %.4f -> %.4f", -float(np.sum(initial.rgb_shape)), c1)
    rgb_mask = problem.rgb_mask(stage1)
    stage2, c2 = search(lambda th: problem.thermal_stage_cost(th, rgb_mask), stage1, THERMAL_NAMES, max_evaluations)
    log.info("thermal stage: cost %.4f", c2)

    final = problem.breakdown(stage2)
    if final.n_thermal == 0 and final.n_rgb == 0:
        raise NoRegionsDetected("no regions detected with the tuned thresholds on either camera")
    if final.total > initial.total:
        stage2, final = init, initial
    return TuningResult(stage2, final, initial, time.perf_counter() - t0, problem.evaluations)


class ThresholdTuner(BaseEstimator):
    """Estimator wrapper around :func:`optimize_thresholds`.

    ``fit(X, y)`` takes the thermal frame as ``X`` and the registered RGB
    frame as ``y``; the fitted thresholds configure new row detectors.
    """

    def __init__(self, init=None, geometry=None, panel=None, method="coordinate", max_evaluations=400):
        self.init = init
        self.geometry = geometry
        self.panel = panel
        self.method = method
        self.max_evaluations = max_evaluations

    def fit(self, X, y):
        result = optimize_thresholds(
            X, y, self.init, self.geometry, self.panel, method=self.method, max_evaluations=self.max_evaluations
        )
        self.thresholds_ = result.thresholds
        self.cost_ = result.cost
        self.initial_cost_ = result.initial_cost
        self.elapsed_ = result.elapsed
        self.n_evaluations_ = result.evaluations
        return self

    def score(self, X, y):
        """Negated full cost, so that higher is better as for other estimators."""
        return -segmentation_cost(X, y, self.thresholds_, self.geometry, self.panel).total

    def thermal_detector(self, **kw) -> ThermalRowDetector:
        th = self.thresholds_
        return ThermalRowDetector(th.th1, th.th2, th.th3, geometry=self.geometry, panel=self.panel, **kw).fit()

    def rgb_detector(self, **kw) -> RgbRowDetector:
        th = self.thresholds_
        return RgbRowDetector(*th.hsv.as_tuple(), hue_wrap=th.hue_wrap, geometry=self.geometry, panel=self.panel, **kw).fit()


def thresholds_document(result: TuningResult) -> dict:
    """Serializable record of a tuning run."""
    return {
        "schema": THRESHOLDS_SCHEMA,
        "thresholds": result.thresholds.to_dict(),
        "cost": result.cost.summary(),
        "initial_cost": result.initial_cost.summary(),
        "elapsed_s": result.elapsed,
        "evaluations": result.evaluations,
    }
