import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pvtrack.errors import DegenerateRegion, NoIntersection
from pvtrack.geometry import ImageGeometry, PixelPoint
from pvtrack.lines import (
    ObservedLine,
    RegressionLine,
    canonical_direction,
    clip_to_border,
    cluster_lines,
    fit_points,
    fit_region_line,
    line_angle,
    lines_from_mask,
    mean_line_distance,
)
from pvtrack.thermal import Region


def segment(p0, p1, n=50, width=0.0, rng=None):
    t = np.linspace(0, 1, n)[:, None]
    pts = np.asarray(p0, float) + t * (np.asarray(p1, float) - np.asarray(p0, float))
    if width:
        d = np.asarray(p1, float) - np.asarray(p0, float)
        normal = np.array([-d[1], d[0]]) / np.hypot(*d)
        pts = pts + np.outer((rng or np.random.default_rng(0)).uniform(-width, width, n), normal)
    return fit_points(pts)


def test_horizontal_strip():
    r = Region(rows=np.zeros(10, int), cols=np.arange(10))
    line = fit_region_line(r)
    np.testing.assert_allclose(line.direction, [1.0, 0.0])
    np.testing.assert_allclose(line.point, [5.0, 0.5])


def test_diagonal_strip():
    line = fit_region_line(Region(rows=np.arange(20), cols=np.arange(20)))
    np.testing.assert_allclose(np.abs(line.direction), [1 / math.sqrt(2)] * 2)
    assert line.direction[1] > 0


def test_noisy_strip_slope(rng):
    u = rng.uniform(0, 600, 4000)
    v = 0.1 * u + 50 + rng.normal(0, 1.0, u.size)
    line = fit_points(np.column_stack((u, v)))
    assert line.direction[1] / line.direction[0] == pytest.approx(0.1, abs=0.02)


def test_degenerate_regions():
    with pytest.raises(DegenerateRegion):
        fit_points(np.array([[1.0, 2.0]]))
    with pytest.raises(DegenerateRegion):
        fit_points(np.array([[1.0, 2.0], [1.0, 2.0]]))


@given(st.floats(-math.pi, math.pi))
def test_canonical_direction_upper_half_plane(phi):
    d = canonical_direction([math.cos(phi), math.sin(phi)])
    assert np.hypot(*d) == pytest.approx(1.0)
    assert d[1] > 0 or (d[1] == 0 and d[0] > 0)


def test_collinear_segments_merge():
    a = segment((100, 0), (100, 100))
    b = segment((100, 150), (100, 250))
    clusters = cluster_lines([a, b], dist_tol=20)
    assert len(clusters) == 1 and clusters[0].members == (0, 1)


def test_far_parallel_lines_stay_apart():
    a = segment((100, 0), (100, 500))
    b = segment((300, 0), (300, 500))
    assert len(cluster_lines([a, b], dist_tol=40)) == 2


def test_row_segments_and_distractor():
    segs = [segment((200, v), (201, v + 90), width=8) for v in (0, 150, 300)]
    distractor = segment((150, 200), (260, 200), width=4)
    clusters = cluster_lines(segs + [distractor], dist_tol=20)
    assert sorted(len(c.members) for c in clusters) == [1, 3]


def test_merged_line_fits_members_better_than_wrong_cluster():
    rng = np.random.default_rng(3)
    row_a = [segment((100, v), (102, v + 80), width=5, rng=rng) for v in (0, 120, 240)]
    row_b = [segment((400, v), (398, v + 80), width=5, rng=rng) for v in (40, 200)]
    clusters = cluster_lines(row_a + row_b, dist_tol=25)
    assert len(clusters) == 2
    by_first = {c.members[0]: c for c in clusters}
    a, b = by_first[0].line, by_first[3].line
    for m in row_a:
        assert a.distances(m.samples()).mean() <= b.distances(m.samples()).mean()


@given(st.permutations(list(range(6))))
def test_clustering_is_order_invariant(order):
    rng = np.random.default_rng(7)
    lines = [segment((150 + 3 * k, 80 * k), (151 + 3 * k, 80 * k + 60), width=4, rng=rng) for k in range(3)]
    lines += [segment((450, 80 * k), (452, 80 * k + 60), width=4, rng=rng) for k in range(3)]

    def partition(idx_order):
        clusters = cluster_lines([lines[i] for i in idx_order], dist_tol=25)
        return sorted(tuple(sorted(idx_order[m] for m in c.members)) for c in clusters)

    assert partition(list(range(6))) == partition(list(order))


def test_cluster_invariants(rng):
    lines = [segment(rng.uniform(0, 600, 2), rng.uniform(0, 600, 2), width=3, rng=rng) for _ in range(12)]
    clusters = cluster_lines(lines, dist_tol=20)
    members = sorted(i for c in clusters for i in c.members)
    assert members == list(range(12))
    assert len(clusters) <= len(lines)


def test_line_angle_and_distance():
    a = segment((0, 0), (0, 100))
    b = segment((10, 0), (10, 100))
    assert line_angle(a, b) == pytest.approx(0.0, abs=1e-9)
    assert mean_line_distance(a, b) == pytest.approx(10.0)


def test_clip_examples():
    h = clip_to_border(RegressionLine(np.array([100.0, 256.0]), np.array([1.0, 0.0])), 640, 512)
    assert (h.p1, h.p2) == (PixelPoint(0, 256), PixelPoint(640, 256))
    d = clip_to_border(RegressionLine(np.array([256.0, 256.0]), np.array([1.0, 1.0])), 512, 512)
    assert {tuple(d.p1), tuple(d.p2)} == {(0.0, 0.0), (512.0, 512.0)}
    s = clip_to_border(RegressionLine(np.array([0.0, 100.0]), np.array([1.0, 0.2])), 640, 512)
    assert s.p1 == pytest.approx((0, 100))
    assert s.p2 == pytest.approx((640, 228))


def test_clip_line_missing_image():
    with pytest.raises(NoIntersection):
        clip_to_border(RegressionLine(np.array([-10.0, -10.0]), np.array([1.0, -1.0])), 640, 512)


@given(st.floats(0, 640), st.floats(0, 512), st.floats(0, math.pi))
def test_clip_points_on_border(u, v, phi):
    line = RegressionLine(np.array([u, v]), np.array([math.cos(phi), math.sin(phi)]))
    try:
        obs = clip_to_border(line, 640, 512)
    except NoIntersection:
        # only acceptable when the line merely grazes a corner
        side = [(np.array(c) - line.point) @ line.normal for c in ((0, 0), (640, 0), (0, 512), (640, 512))]
        assert min(side) > -1e-6 or max(side) < 1e-6
        return
    for p in (obs.p1, obs.p2):
        assert 0 <= p.u <= 640 and 0 <= p.v <= 512
        assert min(p.u, 640 - p.u, p.v, 512 - p.v) < 1e-6
        assert abs((np.array(p) - line.point) @ line.normal) < 1e-6
    assert obs.p1 != obs.p2


def test_observed_line_to_camera():
    g = ImageGeometry()
    vertical = ObservedLine(PixelPoint(320, 0), PixelPoint(320, 512))
    cam = vertical.to_camera_line(g)
    assert (cam.a, cam.b) == pytest.approx((0.0, 0.0))
    assert vertical.tilt == pytest.approx(0.0)


def test_lines_from_mask_two_rows():
    mask = np.zeros((200, 300), np.uint8)
    mask[:, 50:70] = 1
    mask[:, 200:220] = 1
    lines, regions = lines_from_mask(mask, min_area=100, dist_tol=10)
    assert len(regions) == 2
    assert sorted(round(l.p1.u) for l in lines) == [60, 210]


def test_max_tilt_drops_crossing_lines():
    mask = np.zeros((200, 300), np.uint8)
    mask[:, 50:70] = 1
    mask[180:195, 120:280] = 1
    lines, _ = lines_from_mask(mask, min_area=100, dist_tol=10)
    assert len(lines) == 2
    lines, _ = lines_from_mask(mask, min_area=100, dist_tol=10, max_tilt=math.radians(45))
    assert len(lines) == 1 and lines[0].tilt < 1e-9


def fragment(p0, p1, width, rng):
    line = segment(p0, p1, n=80, width=width, rng=rng)
    return RegressionLine(line.point, line.direction, line.support, truncated=True)


def test_fragment_joins_its_row_despite_its_axis():
    rng = np.random.default_rng(11)
    whole = segment((300, 100), (302, 400), width=30, rng=rng)
    # a short, wide piece cut by the top border: its axis runs across the row
    stub = fragment((270, 5), (330, 5), width=5, rng=rng)
    assert line_angle(whole, stub) > math.radians(80)
    assert len(cluster_lines([whole, stub], dist_tol=40)) == 1


def test_fragments_of_neighbouring_rows_stay_apart():
    rng = np.random.default_rng(12)
    a = fragment((270, 505), (330, 505), width=5, rng=rng)
    b = fragment((500, 507), (560, 507), width=5, rng=rng)
    # collinear, but 170 px apart along the border
    assert line_angle(a, b) < math.radians(5) and mean_line_distance(a, b) < 10
    assert len(cluster_lines([a, b], dist_tol=40)) == 2


def test_consecutive_fragments_join():
    rng = np.random.default_rng(13)
    a = fragment((620, 0), (621, 150), width=15, rng=rng)
    b = fragment((621, 156), (622, 300), width=15, rng=rng)
    clusters = cluster_lines([a, b], dist_tol=40)
    assert len(clusters) == 1 and clusters[0].line.truncated


def test_lines_from_mask_marks_border_regions():
    mask = np.zeros((200, 300), np.uint8)
    mask[0:60, 100:140] = 1
    mask[70:190, 100:140] = 1
    lines, regions = lines_from_mask(mask, min_area=100, dist_tol=30)
    assert len(regions) == 2 and len(lines) == 1
    assert lines[0].tilt < math.radians(1)
