"""Regression lines for segmented regions, row clustering, border clipping.

Shared verbatim by the thermal and RGB front-ends; only the binarisation
differs between the two cameras.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateRegion, NoIntersection
from .geometry import ImageGeometry, LineParams, PixelPoint, line_from_camera_points, pixel_to_camera
from .thermal import Region, extract_regions

DEFAULT_ANGLE_TOL = math.radians(5.0)

# cap on pixels used when averaging point-line distances
_MAX_DISTANCE_SAMPLES = 2000


def canonical_direction(d) -> np.ndarray:
    """Unit vector with second component >= 0 (first > 0 when that is 0)."""
    d = np.asarray(d, dtype=float)
    d = d / np.hypot(d[0], d[1])
    if abs(d[1]) < 1e-15:
        return np.array([1.0, 0.0])
    return d if d[1] > 0 else -d


@dataclass(frozen=True, eq=False)
class RegressionLine:
    """Line through ``point`` along the unit vector ``direction`` (image frame).

    ``support`` holds the pixel centres the line was fitted to; clustering
    measures distances over them. ``truncated`` marks a line fitted to a
    region cut by the image border, whose orientation is unreliable.
    """

    point: np.ndarray
    direction: np.ndarray
    support: np.ndarray | None = field(default=None, repr=False)
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "direction", canonical_direction(self.direction))

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.direction[1], self.direction[0]])

    def samples(self) -> np.ndarray:
        if self.support is not None:
            return self.support
        return np.vstack((self.point - self.direction, self.point + self.direction))

    def distances(self, pts) -> np.ndarray:
        """Unsigned orthogonal distances of ``pts`` to this line."""
        return np.abs((np.asarray(pts) - self.point) @ self.normal)


@dataclass(frozen=True, eq=False)
class LineCluster:
    members: tuple[int, ...]
    line: RegressionLine


@dataclass(frozen=True)
class ObservedLine:
    """A detected midline as its two intersections with the image border."""

    p1: PixelPoint
    p2: PixelPoint

    def to_camera_line(self, g: ImageGeometry) -> LineParams:
        return line_from_camera_points(pixel_to_camera(self.p1, g), pixel_to_camera(self.p2, g))

    @property
    def angle(self) -> float:
        """Orientation in the image plane, in [0, pi)."""
        return math.atan2(self.p2.v - self.p1.v, self.p2.u - self.p1.u) % math.pi

    @property
    def tilt(self) -> float:
        """Angle to the image's forward (vertical) axis, in [0, pi/2]."""
        return abs(self.angle - math.pi / 2)


def fit_points(pts) -> RegressionLine:
    """Orthogonal (total least squares) line through a point set."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DegenerateRegion("need at least two points to fit a line")
    centroid = pts.mean(axis=0)
    centred = pts - centroid
    cov = centred.T @ centred
    if np.trace(cov) <= 1e-12:
        raise DegenerateRegion("all points coincide")
    _, vecs = np.linalg.eigh(cov)
    return RegressionLine(centroid, vecs[:, -1], support=pts)


def fit_region_line(r: Region) -> RegressionLine:
    return fit_points(r.points)


def _subsample(pts):
    if len(pts) <= _MAX_DISTANCE_SAMPLES:
        return pts
    step = int(math.ceil(len(pts) / _MAX_DISTANCE_SAMPLES))
    return pts[::step]


def line_angle(l1: RegressionLine, l2: RegressionLine) -> float:
    """Angle between two undirected lines, in [0, pi/2]."""
    c = abs(float(l1.direction @ l2.direction))
    return math.acos(min(1.0, c))


def mean_line_distance(l1: RegressionLine, l2: RegressionLine) -> float:
    """Symmetrised average distance of each line's pixels to the other line."""
    d12 = l2.distances(_subsample(l1.samples())).mean()
    d21 = l1.distances(_subsample(l2.samples())).mean()
    return 0.5 * float(d12 + d21)


def _fragment_distance(fragment: RegressionLine, other: RegressionLine) -> float:
    """Average distance of a fragment's pixels to another line."""
    return float(other.distances(_subsample(fragment.samples())).mean())


def _along_gap(l1: RegressionLine, l2: RegressionLine) -> float:
    """Gap between the two pixel sets projected on the first line."""
    p1 = l1.samples() @ l1.direction
    p2 = l2.samples() @ l1.direction
    return max(0.0, float(max(p1.min(), p2.min()) - min(p1.max(), p2.max())))


def _same_row(l1, l2, angle_tol, dist_tol):
    if l1.truncated and l2.truncated:
        # Modules cut by the same border all lean along it, so collinearity
        # alone would chain neighbouring rows together; consecutive pieces of
        # one row are also adjacent along it.
        return (
            line_angle(l1, l2) <= angle_tol
            and mean_line_distance(l1, l2) <= dist_tol
            and _along_gap(l1, l2) <= dist_tol
        )
    if l1.truncated or l2.truncated:
        # A border-cut region's axis can lean far off its row: judge it by
        # where its pixels lie relative to the whole region's line.
        fragment, whole = (l1, l2) if l1.truncated else (l2, l1)
        return _fragment_distance(fragment, whole) <= dist_tol
    return line_angle(l1, l2) <= angle_tol and mean_line_distance(l1, l2) <= dist_tol


def cluster_lines(lines: Sequence[RegressionLine], angle_tol=DEFAULT_ANGLE_TOL, dist_tol=20.0) -> list[LineCluster]:
    """Group lines into rows: the transitive closure of the pairwise test.

    Two lines are linked when their directions differ by at most
    ``angle_tol`` and their mean point-line distance is at most ``dist_tol``.
    A line marked ``truncated`` is linked to an untruncated one on distance
    alone: its pixels must lie within ``dist_tol`` of that line on average.
    Two truncated lines must pass the ordinary test and also lie within
    ``dist_tol`` of each other along their common direction.
    Each cluster's line is refitted on the union of its members' pixels.
    Clusters are ordered by their smallest member index.
    """
    if not (angle_tol > 0 and dist_tol > 0):
        raise ValueError("tolerances must be positive")
    n = len(lines)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for k in range(i + 1, n):
            if find(i) != find(k) and _same_row(lines[i], lines[k], angle_tol, dist_tol):
                ri, rk = find(i), find(k)
                parent[max(ri, rk)] = min(ri, rk)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    clusters = []
    for members in sorted(groups.values(), key=lambda m: m[0]):
        if len(members) == 1:
            merged = lines[members[0]]
        else:
            merged = fit_points(np.vstack([lines[i].samples() for i in members]))
            merged = RegressionLine(merged.point, merged.direction, merged.support,
                                    all(lines[i].truncated for i in members))
        clusters.append(LineCluster(tuple(members), merged))
    return clusters


def clip_to_border(line: RegressionLine, U, V) -> ObservedLine:
    """Intersect the infinite line with the image rectangle ``[0,U] x [0,V]``.

    The two points are ordered by ascending ``v``, then ``u``.
    """
    (pu, pv), (du, dv) = line.point, line.direction
    tol = 1e-9 * max(U, V)
    hits = []
    if abs(du) > 1e-15:
        for u_edge in (0.0, float(U)):
            v = pv + (u_edge - pu) / du * dv
            if -tol <= v <= V + tol:
                hits.append((u_edge, min(max(v, 0.0), float(V))))
    if abs(dv) > 1e-15:
        for v_edge in (0.0, float(V)):
            u = pu + (v_edge - pv) / dv * du
            if -tol <= u <= U + tol:
                hits.append((min(max(u, 0.0), float(U)), v_edge))
    unique = []
    for h in hits:
        if all(math.dist(h, q) > tol for q in unique):
            unique.append(h)
    if len(unique) < 2:
        raise NoIntersection("line does not cross the image in two points")
    if len(unique) > 2:
        pairs = [(math.dist(a, b), a, b) for i, a in enumerate(unique) for b in unique[i + 1:]]
        _, a, b = max(pairs, key=lambda t: t[0])
        unique = [a, b]
    a, b = sorted(unique, key=lambda q: (q[1], q[0]))
    return ObservedLine(PixelPoint(*a), PixelPoint(*b))


def lines_from_mask(mask, min_area, angle_tol=DEFAULT_ANGLE_TOL, dist_tol=20.0, max_tilt=None):
    """Regions -> regression lines -> row clusters -> observed lines.

    Returns ``(observed_lines, regions)``; degenerate regions are skipped.
    With ``max_tilt`` set, lines leaning further than that from the flight
    direction are dropped: modules cut by the top or bottom border otherwise
    yield short, wide regions whose axis crosses the row.
    """
    regions = extract_regions(mask, min_area)
    H, W = mask.shape
    fitted = []
    for r in regions:
        try:
            line = fit_region_line(r)
        except DegenerateRegion:
            continue
        if r.rows.min() == 0 or r.cols.min() == 0 or r.rows.max() == H - 1 or r.cols.max() == W - 1:
            line = RegressionLine(line.point, line.direction, line.support, truncated=True)
        fitted.append(line)
    observed = []
    for cluster in cluster_lines(fitted, angle_tol, dist_tol):
        try:
            line = clip_to_border(cluster.line, mask.shape[1], mask.shape[0])
        except NoIntersection:
            continue
        if max_tilt is None or line.tilt <= max_tilt:
            observed.append(line)
    return observed, regions
