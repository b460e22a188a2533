"""Row detectors for thermal and RGB frames, in scikit-learn estimator form.

``transform`` returns the binary segmentation mask and ``predict`` the
observed row midlines, so a detector can sit in a pipeline or be cloned and
re-parameterised with ``set_params`` during threshold tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import InvalidThresholds
from .geometry import ImageGeometry
from .lines import DEFAULT_ANGLE_TOL, lines_from_mask
from .rgb import HsvThresholds, segment_rgb
from .thermal import segment_thermal, threshold_band
from .validation import check_matches_geometry, check_rgb_image, check_thermal_image


# rows are flown along, so a row never leans more than this in the image;
# the tracker uses it to drop lines from border-truncated modules
FLIGHT_MAX_TILT = math.radians(45.0)


@dataclass(frozen=True)
class PanelSpec:
    """Physical size of the PV rows being tracked.

    ``module_length`` is the length of one table between two junctions; the
    thermal camera sees every table as a separate rectangle.
    """

    width: float = 2.0
    module_length: float = 4.0

    def width_px(self, geometry: ImageGeometry) -> float:
        return self.width / geometry.meters_per_pixel

    def module_area_px(self, geometry: ImageGeometry) -> float:
        return self.width * self.module_length / geometry.meters_per_pixel**2

    def row_area_px(self, geometry: ImageGeometry) -> float:
        """Area of a row crossing the whole frame along the flight direction."""
        return self.width_px(geometry) * geometry.height


class _RowDetector(BaseEstimator, TransformerMixin):
    """Shared parameter resolution and line extraction."""

    def _resolve(self):
        geometry = self.geometry if self.geometry is not None else ImageGeometry()
        panel = self.panel if self.panel is not None else PanelSpec()
        self.geometry_ = geometry
        self.min_area_ = (
            int(self.min_area) if self.min_area is not None else max(1, int(0.25 * panel.module_area_px(geometry)))
        )
        self.dist_tol_ = float(self.dist_tol) if self.dist_tol is not None else 0.5 * panel.width_px(geometry)
        if not self.angle_tol > 0:
            raise ValueError("angle_tol must be positive")
        if self.max_tilt is not None and not 0 < self.max_tilt <= math.pi / 2:
            raise ValueError("max_tilt must lie in (0, pi/2]")

    def fit(self, X=None, y=None):
        """Resolve geometry-dependent defaults. No data is needed."""
        self._validate_thresholds()
        self._resolve()
        return self

    def detect(self, X):
        """Return ``(observed_lines, regions)`` for one frame."""
        mask = self.transform(X)
        return lines_from_mask(mask, self.min_area_, self.angle_tol, self.dist_tol_, self.max_tilt)

    def predict(self, X):
        return self.detect(X)[0]


class ThermalRowDetector(_RowDetector):
    """Band threshold ``(th1, th2)``, distance filter ``th3``, then lines."""

    def __init__(self, th1=140.0, th2=200.0, th3=3.0, min_area=None, angle_tol=DEFAULT_ANGLE_TOL,
                 dist_tol=None, max_tilt=None, geometry=None, panel=None):
        self.th1 = th1
        self.th2 = th2
        self.th3 = th3
        self.min_area = min_area
        self.angle_tol = angle_tol
        self.dist_tol = dist_tol
        self.max_tilt = max_tilt
        self.geometry = geometry
        self.panel = panel

    def _validate_thresholds(self):
        # raises InvalidThresholds on bad values
        threshold_band([[0]], self.th1, self.th2)
        if not self.th3 > 0:
            raise InvalidThresholds(f"th3 must be positive, got {self.th3}")

    def transform(self, X):
        check_is_fitted(self, "min_area_")
        X = check_thermal_image(X)
        check_matches_geometry(X, self.geometry)
        return segment_thermal(X, self.th1, self.th2, self.th3)


class RgbRowDetector(_RowDetector):
    """HSV band thresholds ``th4..th9`` (hue in degrees), then lines."""

    def __init__(self, th4=190.0, th5=60.0, th6=40.0, th7=250.0, th8=255.0, th9=230.0, hue_wrap=False,
                 min_area=None, angle_tol=DEFAULT_ANGLE_TOL, dist_tol=None, max_tilt=None, geometry=None, panel=None):
        self.th4 = th4
        self.th5 = th5
        self.th6 = th6
        self.th7 = th7
        self.th8 = th8
        self.th9 = th9
        self.hue_wrap = hue_wrap
        self.min_area = min_area
        self.angle_tol = angle_tol
        self.dist_tol = dist_tol
        self.max_tilt = max_tilt
        self.geometry = geometry
        self.panel = panel

    @property
    def thresholds(self) -> HsvThresholds:
        return HsvThresholds(self.th4, self.th5, self.th6, self.th7, self.th8, self.th9, self.hue_wrap)

    def _validate_thresholds(self):
        self.thresholds

    def transform(self, X):
        check_is_fitted(self, "min_area_")
        X = check_rgb_image(X)
        check_matches_geometry(X, self.geometry)
        return segment_rgb(X, self.thresholds)


def detect_thermal(img, th1, th2, th3, geometry=None, panel=None, **kw):
    return ThermalRowDetector(th1, th2, th3, geometry=geometry, panel=panel, **kw).fit().predict(img)


def detect_rgb(img, th: HsvThresholds, geometry=None, panel=None, **kw):
    det = RgbRowDetector(*th.as_tuple(), hue_wrap=th.hue_wrap, geometry=geometry, panel=panel, **kw)
    return det.fit().predict(img)
