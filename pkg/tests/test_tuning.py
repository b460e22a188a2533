import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from pvtrack.errors import InvalidThresholds, NoRegionsDetected, ShapeMismatch
from pvtrack.geometry import ImageGeometry, Pose2D
from pvtrack.simulator import default_plant, render_rgb, render_thermal
from pvtrack.thermal import Region
from pvtrack import tuning
from pvtrack.tuning import (
    NAMES,
    THRESHOLDS_SCHEMA,
    ShapeWeights,
    ThresholdSet,
    ThresholdTuner,
    alignment,
    area_match,
    correlation_term,
    min_area_rectangle,
    optimize_thresholds,
    rectangularity,
    segmentation_cost,
    shape_cost,
    thresholds_document,
)

SMALL = ImageGeometry().scaled(0.25)


def region_of(mask):
    rows, cols = np.nonzero(mask)
    return Region(rows=rows, cols=cols)


def block(n_rows, n_cols, at=(0, 0), shape=(64, 64)):
    m = np.zeros(shape, bool)
    m[at[0] : at[0] + n_rows, at[1] : at[1] + n_cols] = True
    return m


@pytest.fixture(scope="module")
def pair():
    layout, pose = default_plant(), Pose2D(30.0, 3.0, 0.0)
    return render_thermal(layout, pose, SMALL), render_rgb(layout, pose, SMALL)


# ---------------------------------------------------------------- shape


def test_full_aligned_rectangle_scores_one():
    r = region_of(block(40, 10))
    assert shape_cost(r, expected_area=400) == pytest.approx(1.0)


def test_rectangle_across_the_heading_has_no_alignment():
    r = region_of(block(10, 40))
    assert alignment(r, heading=0.0) == pytest.approx(0.0, abs=1e-12)
    assert alignment(r, heading=math.pi / 2) == pytest.approx(1.0)
    assert shape_cost(r, expected_area=400) == pytest.approx(2 / 3)


def test_l_shape_is_half_rectangular():
    m = np.zeros((6, 12), bool)
    m[:, :3] = True
    m[4:, 3:] = True
    assert m.sum() == 36  # half of the 6 x 12 box
    assert rectangularity(region_of(m)) == pytest.approx(0.5)


def test_area_match_examples():
    assert area_match(100, 100) == 1.0
    assert area_match(200, 100) == pytest.approx(math.exp(-1))
    assert area_match(0, 100) == pytest.approx(math.exp(-1))


def test_min_area_rectangle_of_rotated_square():
    c, s = math.cos(0.3), math.sin(0.3)
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float) @ np.array([[c, -s], [s, c]]).T * 5
    assert min_area_rectangle(square) == pytest.approx(25.0)


@given(st.integers(1, 30), st.integers(1, 30), st.floats(-math.pi, math.pi), st.floats(1, 5000))
def test_shape_cost_in_unit_interval(h, w, heading, expected):
    c = shape_cost(region_of(block(h, w)), expected, heading)
    assert 0.0 <= c <= 1.0 + 1e-12


def test_shape_cost_validation():
    with pytest.raises(ValueError):
        shape_cost(region_of(block(3, 3)), 0.0)
    with pytest.raises(ValueError):
        ShapeWeights(0.5, 0.5, 0.5)


# ---------------------------------------------------------- correlation


def test_correlation_examples():
    r = region_of(block(10, 10, at=(5, 5)))
    assert correlation_term(r, block(30, 30)) == 1.0
    assert correlation_term(r, block(5, 5, at=(40, 40))) == 0.0
    assert correlation_term(r, block(10, 5, at=(5, 5))) == 0.5


def test_correlation_shape_mismatch():
    r = region_of(block(10, 10, at=(50, 50)))
    with pytest.raises(ShapeMismatch):
        correlation_term(r, np.ones((20, 20)))
    with pytest.raises(ShapeMismatch):
        correlation_term(r, np.ones((64, 64, 3)))


# ----------------------------------------------------------------- cost


def test_thresholds_excluding_everything_cost_zero(pair):
    nothing = ThresholdSet(th1=250.0, th2=255.0, th4=0.0, th7=1.0)
    b = segmentation_cost(*pair, nothing, SMALL)
    assert b.total == 0.0
    assert b.n_thermal == b.n_rgb == 0


def test_clean_rows_score_at_least_one_each(pair):
    b = segmentation_cost(*pair, ThresholdSet(), SMALL)
    # two full rows in view, cut into modules in the thermal frame
    assert b.n_rgb >= 2 and b.n_thermal >= 2
    assert b.total <= -2.0


def test_cost_is_the_sum_of_its_terms(pair):
    b = segmentation_cost(*pair, ThresholdSet(), SMALL)
    terms = [b.thermal_shape, b.thermal_overlap, b.rgb_shape, b.rgb_overlap]
    assert b.total == pytest.approx(-sum(float(t.sum()) for t in terms))
    assert b.thermal_cost >= b.total
    assert b.rgb_cost >= b.total


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_cost_terms_are_bounded(pair, seed):
    th = ThresholdSet().perturbed(30, seed)
    b = segmentation_cost(*pair, th, SMALL)
    for t in (b.thermal_shape, b.thermal_overlap, b.rgb_shape, b.rgb_overlap):
        assert np.all((t >= 0) & (t <= 1 + 1e-12))
    assert -2 * (b.n_thermal + b.n_rgb) <= b.total <= 0


def test_cost_is_translation_invariant():
    g = ImageGeometry()
    layout, pose = default_plant(), Pose2D(30.0, 3.0, 0.0)
    t, c = render_thermal(layout, pose, g), render_rgb(layout, pose, g)
    base = segmentation_cost(t[:-20, :-20], c[:-20, :-20], ThresholdSet()).total
    for dv, du in ((13, 9), (20, 0), (0, 20), (5, 17)):
        crop = (slice(dv, t.shape[0] - 20 + dv), slice(du, t.shape[1] - 20 + du))
        shifted = segmentation_cost(t[crop], c[crop], ThresholdSet()).total
        assert abs(shifted - base) < 0.05 * abs(base)


def test_cost_requires_registered_pair(pair):
    t, c = pair
    with pytest.raises(ShapeMismatch):
        segmentation_cost(t, c[:-1], ThresholdSet(), SMALL)


# ----------------------------------------------------------- thresholds


def test_threshold_set_validation():
    with pytest.raises(InvalidThresholds):
        ThresholdSet(th1=200.0, th2=100.0)
    with pytest.raises(InvalidThresholds):
        ThresholdSet(th3=0.0, bounds={"th3": (0.0, 30.0)})
    with pytest.raises(InvalidThresholds):
        ThresholdSet(th1=50.0, bounds={"th1": (100.0, 200.0)})


@given(st.integers(0, 10_000), st.floats(0, 60))
def test_perturbation_stays_valid(seed, delta):
    base = ThresholdSet()
    p = base.perturbed(delta, seed)
    for name in NAMES:
        lo, hi = p.bounds[name]
        assert lo <= getattr(p, name) <= hi
        assert abs(getattr(p, name) - getattr(base, name)) <= delta + 1e-9


def test_threshold_dict_roundtrip():
    th = ThresholdSet(th1=120.0, hue_wrap=True, bounds={"th1": (100.0, 150.0)})
    back = ThresholdSet.from_dict(th.to_dict())
    assert back == th and back.bounds == th.bounds
    with pytest.raises(InvalidThresholds):
        ThresholdSet.from_dict({"th10": 3})


# ------------------------------------------------------------ optimizer


def test_optimum_is_not_degraded(pair):
    first = optimize_thresholds(*pair, ThresholdSet(), SMALL)
    again = optimize_thresholds(*pair, first.thresholds, SMALL)
    assert again.cost.total <= first.cost.total
    assert again.cost.total <= again.initial_cost.total


@pytest.mark.parametrize("method", ["coordinate", "lbfgsb"])
def test_result_never_worse_than_init(pair, method):
    init = ThresholdSet().perturbed(10, 4)
    res = optimize_thresholds(*pair, init, SMALL, method=method, max_evaluations=120)
    assert res.cost.total <= res.initial_cost.total
    assert res.elapsed > 0 and res.evaluations > 0


def test_every_iterate_stays_in_bounds(pair, monkeypatch):
    bounds = {"th1": (120.0, 150.0), "th2": (180.0, 210.0), "th4": (180.0, 200.0), "th7": (240.0, 260.0)}
    seen = []
    for stage in ("rgb_stage_cost", "thermal_stage_cost"):
        original = getattr(tuning._Problem, stage)

        def recording(self, th, *args, _original=original):
            seen.append(th)
            return _original(self, th, *args)

        monkeypatch.setattr(tuning._Problem, stage, recording)
    init = ThresholdSet(bounds=bounds)
    res = optimize_thresholds(*pair, init, SMALL, max_evaluations=150)
    assert len(seen) > 10
    for th in seen + [res.thresholds]:
        for name, (lo, hi) in bounds.items():
            assert lo <= getattr(th, name) <= hi


def test_stages_touch_only_their_thresholds(pair, monkeypatch):
    init = ThresholdSet()
    rgb_seen, thermal_seen = [], []
    rgb_cost, thermal_cost = tuning._Problem.rgb_stage_cost, tuning._Problem.thermal_stage_cost
    monkeypatch.setattr(tuning._Problem, "rgb_stage_cost", lambda self, th: (rgb_seen.append(th), rgb_cost(self, th))[1])
    monkeypatch.setattr(
        tuning._Problem, "thermal_stage_cost", lambda self, th, m: (thermal_seen.append(th), thermal_cost(self, th, m))[1]
    )
    optimize_thresholds(*pair, init, SMALL, max_evaluations=80)
    assert all(th.thermal == init.thermal for th in rgb_seen)
    assert len({th.hsv for th in thermal_seen}) == 1


def test_empty_scene_raises():
    far = Pose2D(400.0, 400.0, 0.0)
    t, c = render_thermal(default_plant(), far, SMALL), render_rgb(default_plant(), far, SMALL)
    with pytest.raises(NoRegionsDetected):
        optimize_thresholds(t, c, ThresholdSet(), SMALL, max_evaluations=40)


def test_unknown_method(pair):
    with pytest.raises(ValueError):
        optimize_thresholds(*pair, ThresholdSet(), SMALL, method="annealing")


def test_tuner_estimator(pair):
    tuner = ThresholdTuner(geometry=SMALL, max_evaluations=100)
    assert clone(tuner).get_params()["max_evaluations"] == 100
    tuner.fit(*pair)
    assert tuner.score(*pair) == pytest.approx(-tuner.cost_.total)
    assert tuner.thermal_detector().th1 == tuner.thresholds_.th1
    assert tuner.rgb_detector().th4 == tuner.thresholds_.th4


def test_thresholds_document(pair):
    res = optimize_thresholds(*pair, ThresholdSet(), SMALL, max_evaluations=60)
    doc = thresholds_document(res)
    assert doc["schema"] == THRESHOLDS_SCHEMA
    assert ThresholdSet.from_dict(doc["thresholds"]) == res.thresholds
    assert doc["cost"]["total"] == res.cost.total
