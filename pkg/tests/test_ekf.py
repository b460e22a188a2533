import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from pvtrack.ekf import (
    MidlineEKF,
    MidlineState,
    NoiseConfig,
    Observation,
    Sensor,
    gate,
    init_from_waypoints,
    jacobian_h,
    predict,
    update,
)
from pvtrack.errors import FrameMismatch, NearVerticalLine, SingularObservation
from pvtrack.geometry import Frame, LineParams, Pose2D, world_line_to_camera


def finite_difference_jacobian(a, b, pose, step=1e-6):
    """Central differences of the observation model, an independent route to H."""
    H = np.zeros((2, 2))
    for k, (da, db) in enumerate(((step, 0.0), (0.0, step))):
        hi = world_line_to_camera(LineParams(a + da, b + db, "W"), pose).as_array()
        lo = world_line_to_camera(LineParams(a - da, b - db, "W"), pose).as_array()
        H[:, k] = (hi - lo) / (2 * step)
    return H


def obs(a, b, sensor=Sensor.THERMAL, t=0.0):
    return Observation(LineParams(a, b, Frame.CAMERA), sensor, t)


def assert_psd(P):
    assert np.max(np.abs(P - P.T)) <= 1e-12
    assert np.linalg.eigvalsh(P).min() >= -1e-12


def test_init_from_waypoints():
    s = init_from_waypoints((0, 0), (10, 0))
    assert (s.a, s.b) == (0.0, 0.0)
    s = init_from_waypoints((0, 1), (10, 2))
    assert (s.a, s.b) == pytest.approx((0.1, 1.0))
    np.testing.assert_array_equal(s.P, NoiseConfig().P0)
    with pytest.raises(NearVerticalLine):
        init_from_waypoints((0, 0), (0, 5))


def test_prior_is_anchored_at_the_pv_start():
    P0 = np.diag([0.25, 4.0])
    near = init_from_waypoints((0.0, 0.0), (10.0, 0.0), P0)
    far = init_from_waypoints((500.0, 0.0), (510.0, 0.0), P0)
    np.testing.assert_array_equal(near.P, P0)
    np.testing.assert_allclose(far.covariance_at(500.0), P0, atol=1e-9)
    assert far.P[1, 1] > 1000


def test_predict():
    s = MidlineState(0.2, 1.0, np.eye(2))
    assert predict(s, np.zeros((2, 2))).same_as(s)
    np.testing.assert_allclose(predict(s, 1e-6 * np.eye(2)).P, (1 + 1e-6) * np.eye(2))
    s = MidlineState(0.0, 0.0, np.zeros((2, 2)))
    for _ in range(1000):
        s = predict(s, 1e-6 * np.eye(2))
    np.testing.assert_allclose(s.P, 1e-3 * np.eye(2), rtol=1e-12)


def test_jacobian_examples():
    s = MidlineState(0.4, -2.0, np.eye(2))
    np.testing.assert_array_equal(jacobian_h(s, Pose2D(0, 0, 0)), np.eye(2))
    assert jacobian_h(s, Pose2D(3, 1, 0))[1, 0] == pytest.approx(3.0)


@given(st.floats(-3, 3), st.floats(-20, 20), st.floats(-30, 30), st.floats(-30, 30), st.floats(-math.pi, math.pi))
def test_jacobian_matches_finite_differences(a, b, x, y, theta):
    pose = Pose2D(x, y, theta)
    assume(abs(math.cos(pose.theta) + math.sin(pose.theta) * a) > 0.2)
    H = jacobian_h(MidlineState(a, b, np.eye(2)), pose)
    np.testing.assert_allclose(H, finite_difference_jacobian(a, b, pose), rtol=1e-6, atol=1e-6)


def test_jacobian_singular():
    theta = 0.5
    with pytest.raises(SingularObservation):
        jacobian_h(MidlineState(-1 / math.tan(theta), 0, np.eye(2)), Pose2D(0, 0, theta))


def test_gate_accepts_exact_prediction():
    s = MidlineState(0.1, 2.0, np.diag([0.01, 0.1]))
    pose = Pose2D(3, 1, 0.2)
    h = world_line_to_camera(s.line, pose)
    g = gate(s, obs(h.a, h.b), pose, NoiseConfig())
    assert g.accepted
    np.testing.assert_allclose(g.innovation, 0.0, atol=1e-15)


def test_gate_rejects_neighbouring_row():
    s = MidlineState(0.0, 0.0, np.diag([1e-4, 1e-2]))
    noise = NoiseConfig()
    g = gate(s, obs(0.0, 6.0), Pose2D(0, 0, 0), noise)
    # 36 / (0.01 + 0.01) = 1800
    assert g.mahalanobis == pytest.approx(1800.0)
    assert not g.accepted


def test_infinite_gate_accepts_everything():
    s = MidlineState(0.0, 0.0, np.diag([1e-4, 1e-2]))
    noise = NoiseConfig(gate_threshold=math.inf)
    assert gate(s, obs(3.0, 500.0), Pose2D(0, 0, 0), noise).accepted


def test_update_with_zero_innovation_shrinks_covariance():
    s = MidlineState(0.1, 2.0, np.diag([0.25, 4.0]))
    pose = Pose2D(1, 0, 0.1)
    h = world_line_to_camera(s.line, pose)
    u = update(s, obs(h.a, h.b), pose, NoiseConfig())
    assert (u.a, u.b) == pytest.approx((0.1, 2.0), abs=1e-15)
    assert np.trace(u.P) < np.trace(s.P)
    assert_psd(u.P)


def test_huge_measurement_noise_means_no_gain():
    noise = NoiseConfig(R_thermal=1e12 * np.eye(2))
    s = MidlineState(0.0, 0.0, np.diag([0.25, 4.0]))
    u = update(s, obs(0.5, 3.0), Pose2D(0, 0, 0), noise)
    assert abs(u.a - s.a) < 1e-9 and abs(u.b - s.b) < 1e-9


def test_update_matches_linear_kalman_at_identity_pose():
    """At the identity pose h is the identity, so the EKF is a linear KF."""
    P = np.diag([0.25, 4.0])
    R = NoiseConfig().R_thermal
    s = MidlineState(0.0, 1.0, P)
    z = np.array([0.05, 1.4])
    u = update(s, obs(*z), Pose2D(0, 0, 0), NoiseConfig())
    K = P @ np.linalg.inv(P + R)
    np.testing.assert_allclose(u.mean, s.mean + K @ (z - s.mean), rtol=1e-12)
    np.testing.assert_allclose(u.P, (np.eye(2) - K) @ P, rtol=1e-10, atol=1e-15)


def test_sensor_tag_only_selects_noise():
    R = np.diag([1e-3, 1e-2])
    noise = NoiseConfig(R_thermal=R, R_rgb=R)
    s = MidlineState(0.0, 0.0, np.diag([0.25, 4.0]))
    pose = Pose2D(2, 1, 0.3)
    u1 = update(s, obs(0.1, 0.5, Sensor.THERMAL), pose, noise)
    u2 = update(s, obs(0.1, 0.5, Sensor.RGB), pose, noise)
    assert u1.same_as(u2)


@given(st.integers(0, 10_000))
def test_covariance_stays_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    true = LineParams(rng.uniform(-0.5, 0.5), rng.uniform(-5, 5), "W")
    noise = NoiseConfig()
    s = MidlineState(0.0, 0.0, noise.P0)
    for _ in range(30):
        pose = Pose2D(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-0.5, 0.5))
        s = predict(s, noise)
        assert_psd(s.P)
        h = world_line_to_camera(true, pose)
        o = obs(h.a + rng.normal(0, 0.02), h.b + rng.normal(0, 0.1))
        if gate(s, o, pose, noise).accepted:
            s = update(s, o, pose, noise)
        assert_psd(s.P)


@given(st.integers(0, 10_000))
def test_noiseless_observations_converge(seed):
    rng = np.random.default_rng(seed)
    true = LineParams(rng.uniform(-0.5, 0.5), rng.uniform(-5, 5), "W")
    # noiseless observations, and the filter is told so
    noise = NoiseConfig(R_thermal=1e-12 * np.eye(2), gate_threshold=math.inf)
    s = MidlineState(true.a + rng.uniform(-0.3, 0.3), true.b + rng.uniform(-1, 1), noise.P0)
    for _ in range(20):
        pose = Pose2D(rng.uniform(-30, 30), true.b + rng.uniform(-2, 2), rng.uniform(-0.3, 0.3))
        h = world_line_to_camera(true, pose)
        s = update(predict(s, noise), obs(h.a, h.b), pose, noise)
    assert abs(s.a - true.a) < 1e-6
    assert abs(s.b - true.b) < 1e-6


def test_rejected_observation_leaves_state_bitwise_unchanged():
    ekf = MidlineEKF()
    ekf.state = MidlineState(0.0, 0.0, np.diag([1e-4, 1e-2]))
    before = ekf.state
    results = ekf.process([obs(0.0, 6.0)], Pose2D(0, 0, 0))
    assert not results[0].applied
    assert ekf.state.same_as(before)


def test_process_applies_nearest_first_and_regates():
    ekf = MidlineEKF()
    ekf.reset((0.0, 0.0), (10.0, 0.0))
    tracked = obs(0.0, 0.2)
    neighbour = obs(0.0, 6.0)
    results = ekf.process([neighbour, tracked], Pose2D(0, 0, 0))
    applied = {r.observation.line.b: r.applied for r in results}
    assert applied == {0.2: True, 6.0: False}
    assert ekf.state.b == pytest.approx(0.2, abs=0.01)


def test_observation_requires_camera_frame():
    with pytest.raises(FrameMismatch):
        Observation(LineParams(0, 0, Frame.WORLD), Sensor.RGB, 0.0)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(R_rgb=np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        NoiseConfig(Q=np.array([[0.0, 1.0], [0.0, 0.0]]))
