#!/usr/bin/env python3
"""
Test SE(3) exponential/logarithm, generators and the pinhole camera helpers.
"""
import numpy as np
import pytest
from scipy.linalg import expm

from shapefit.errors import BehindCameraError, DegenerateInputError
from shapefit.geometry import (
    CameraIntrinsics,
    Pose,
    StereoRig,
    Twist,
    backproject,
    hat,
    point_twist_jacobian,
    project,
    scalar_field_twist_rows,
    se3_exp,
    se3_generators,
    se3_log,
)


def random_twist(rng):
    """Rotation angle kept below 3 rad so the logarithm is well conditioned."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return np.concatenate([rng.normal(0, 2.0, 3), axis * rng.uniform(0, 3.0)])


def test_exp_of_zero_is_identity():
    pose = se3_exp(np.zeros(6))
    assert np.array_equal(pose.matrix(), np.eye(4))


def test_exp_pure_translation():
    pose = se3_exp([1, 2, 3, 0, 0, 0])
    assert np.allclose(pose.rotation, np.eye(3))
    assert np.allclose(pose.translation, [1, 2, 3])


def test_exp_quarter_turn_about_z_matches_matrix_exponential():
    xi = [0, 0, 0, 0, 0, np.pi / 2]
    pose = se3_exp(xi)
    assert np.allclose(pose.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
    assert np.allclose(pose.matrix(), expm(hat(xi)), atol=1e-12)


def test_exp_matches_matrix_exponential_on_random_twists():
    rng = np.random.default_rng(3)
    for _ in range(50):
        xi = random_twist(rng)
        assert np.allclose(se3_exp(xi).matrix(), expm(hat(xi)), atol=1e-9)


def test_log_of_identity_is_zero():
    assert np.allclose(se3_log(Pose.identity()).vector, 0.0)


def test_log_exp_round_trip_small_twist():
    xi = np.array([0.1, 0, 0, 0, 0, 0.3])
    assert np.allclose(se3_log(se3_exp(xi)).vector, xi, atol=1e-9)


def test_exp_log_round_trip_random_poses():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pose = se3_exp(random_twist(rng))
        back = se3_exp(se3_log(pose))
        assert np.abs(back.matrix() - pose.matrix()).max() < 1e-9


def test_log_near_half_turn_is_degenerate():
    with pytest.raises(DegenerateInputError):
        se3_log(se3_exp([0, 0, 0, np.pi, 0, 0]))


def test_generators_layout():
    gens = se3_generators()
    assert len(gens) == 6
    expected_g0 = np.zeros((4, 4))
    expected_g0[0, 3] = 1.0
    assert np.array_equal(gens[0], expected_g0)
    assert np.array_equal(gens[5][:3, :3], [[0, -1, 0], [1, 0, 0], [0, 0, 0]])
    assert np.all(gens[5][:, 3] == 0)


def test_generators_are_exp_derivatives():
    eps = 1e-6
    for k, g in enumerate(se3_generators()):
        e = np.zeros(6)
        e[k] = eps
        numeric = (se3_exp(e).matrix() - se3_exp(-e).matrix()) / (2 * eps)
        assert np.abs(numeric - g).max() < 1e-6


def test_point_twist_jacobian_columns_are_generator_actions():
    rng = np.random.default_rng(1)
    points = rng.normal(size=(5, 3))
    jac = point_twist_jacobian(points)
    for k, g in enumerate(se3_generators()):
        expected = (g[:3, :3] @ points.T).T + g[:3, 3]
        assert np.allclose(jac[:, :, k], expected)


def test_scalar_field_rows_follow_chain_rule():
    rng = np.random.default_rng(2)
    points = rng.normal(size=(4, 3))
    grads = rng.normal(size=(4, 3))
    rows = scalar_field_twist_rows(points, grads)
    expected = np.einsum("ni,nik->nk", grads, point_twist_jacobian(points))
    assert np.allclose(rows, expected)


def test_pose_inverse_and_compose():
    rng = np.random.default_rng(4)
    a = se3_exp(random_twist(rng))
    b = se3_exp(random_twist(rng))
    assert np.allclose(a.compose(a.inverse()).matrix(), np.eye(4), atol=1e-12)
    assert np.allclose(a.compose(b).matrix(), a.matrix() @ b.matrix())
    assert a.is_valid()


def test_pose_composition_is_associative():
    rng = np.random.default_rng(12)
    for _ in range(50):
        a, b, c = (se3_exp(random_twist(rng)) for _ in range(3))
        left = a.compose(b).compose(c).matrix()
        right = a.compose(b.compose(c)).matrix()
        assert np.allclose(left, right, rtol=0, atol=1e-9)


def test_twist_vector_is_translation_first():
    twist = Twist.from_vector([1, 2, 3, 4, 5, 6])
    assert np.array_equal(twist.v, [1, 2, 3])
    assert np.array_equal(twist.w, [4, 5, 6])


def test_project_optical_axis():
    k = CameraIntrinsics(300.0, 300.0, 160.0, 120.0)
    assert np.allclose(project(k, [0, 0, 1]), [160.0, 120.0])


def test_project_arithmetic():
    k = CameraIntrinsics(100.0, 100.0, 0.0, 0.0)
    assert np.allclose(project(k, [1, 2, 2]), [50, 100])


def test_project_behind_camera_raises():
    k = CameraIntrinsics(100.0, 100.0, 0.0, 0.0)
    with pytest.raises(BehindCameraError):
        project(k, [0, 0, -1])


def test_backproject_examples():
    k = CameraIntrinsics(100.0, 100.0, 0.0, 0.0)
    assert np.allclose(backproject(k, [0, 0], 3.0), [0, 0, 3])
    assert np.allclose(backproject(k, [50, 100], 2.0), [1, 2, 2])
    with pytest.raises(BehindCameraError):
        backproject(k, [0, 0], 0.0)


def test_project_backproject_round_trips():
    rng = np.random.default_rng(5)
    k = CameraIntrinsics(721.5, 718.0, 609.5, 172.8)
    for _ in range(100):
        X = np.array([rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(2, 40)])
        assert np.allclose(backproject(k, project(k, X), X[2]), X, atol=1e-9)
        p = rng.uniform(0, 1000, 2)
        assert np.allclose(project(k, backproject(k, p, rng.uniform(1, 50))), p, atol=1e-9)


def test_rectified_rig_baseline_and_views():
    k = CameraIntrinsics(300.0, 300.0, 160.0, 120.0)
    rig = StereoRig.rectified(k, 0.54)
    assert rig.baseline == pytest.approx(0.54)
    origin, dirs = rig.view("right").rays_in_left(np.array([[160.0, 120.0]]))
    assert np.allclose(origin, [0.54, 0, 0])
    assert np.allclose(dirs, [[0, 0, 1]])
    with pytest.raises(ValueError):
        rig.view("middle")
