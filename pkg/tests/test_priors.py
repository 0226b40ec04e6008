#!/usr/bin/env python3
"""
Test the shape, ground-plane translation and ground-normal rotation priors.
"""
import numpy as np
import pytest

from shapefit.geometry import Pose, se3_exp
from shapefit.priors import (
    GroundPlane,
    default_plane,
    rotation_prior,
    shape_prior,
    translation_prior,
)


def object_at(translation, rotation=None):
    """camera_to_object for an object placed at `translation` in the camera frame."""
    rotation = np.eye(3) if rotation is None else rotation
    return Pose(rotation, translation).inverse()


def numeric_jacobian(prior, camera_to_object, plane, h=1e-6):
    cols = []
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        plus = prior(se3_exp(e).compose(camera_to_object), plane, 0)[0]
        minus = prior(se3_exp(-e).compose(camera_to_object), plane, 0)[0]
        cols.append((plus - minus) / (2 * h))
    return np.array(cols)


def test_shape_prior():
    r, jac = shape_prior([1.0, 2.0], [0.5, 4.0])
    assert np.allclose(r, [2.0, 0.5])
    assert jac.shape == (2, 8)
    assert np.allclose(jac[:, :6], 0.0)
    assert np.allclose(jac[:, 6:], np.diag([2.0, 0.25]))


def test_shape_prior_rejects_non_positive_sigmas():
    with pytest.raises(ValueError):
        shape_prior([1.0], [0.0])


def test_translation_prior_on_and_above_the_plane():
    plane = GroundPlane.from_coefficients([0, 1, 0, -1.65])
    r, _ = translation_prior(object_at([0, 1.65, 10]), plane, 2)
    assert r == pytest.approx(0.0)
    r, _ = translation_prior(object_at([0, 1.75, 10]), plane, 2)
    assert r == pytest.approx(0.10)


def test_translation_prior_matches_default_plane():
    r, jac = translation_prior(object_at([0.5, 1.75, 10]), default_plane(), 3)
    assert r == pytest.approx(0.10)
    assert jac.shape == (9,)
    assert np.allclose(jac[6:], 0.0)


def test_rotation_prior_examples():
    plane = default_plane()
    r, _ = rotation_prior(object_at([0, 1.65, 10]), plane, 1)
    assert r == pytest.approx(0.0)
    upside_down = se3_exp([0, 0, 0, np.pi / 2, 0, 0]).compose(se3_exp([0, 0, 0, np.pi / 2, 0, 0]))
    r, _ = rotation_prior(object_at([0, 1.65, 10], upside_down.rotation), plane, 1)
    assert r == pytest.approx(2.0)


def test_yaw_does_not_change_the_rotation_prior():
    yaw = se3_exp([0, 0, 0, 0, 0.7, 0]).rotation
    r, jac = rotation_prior(object_at([1, 1.65, 8], yaw), default_plane(), 0)
    assert r == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(jac, 0.0, atol=1e-12)


@pytest.mark.parametrize("prior", [translation_prior, rotation_prior])
def test_prior_jacobians_match_finite_differences(prior):
    rng = np.random.default_rng(0)
    plane = GroundPlane.from_coefficients([0.05, -1.0, 0.02, 1.6])
    for _ in range(10):
        pose = se3_exp(np.concatenate([rng.normal(0, 2, 3), rng.normal(0, 0.4, 3)]))
        camera_to_object = Pose(pose.rotation, pose.translation + [0, 0, 10]).inverse()
        _, jac = prior(camera_to_object, plane, 0)
        assert np.allclose(jac, numeric_jacobian(prior, camera_to_object, plane), atol=1e-6)


def test_plane_normalisation():
    plane = GroundPlane.from_coefficients([0, 2, 0, 3.3])
    assert np.allclose(plane.normal, [0, 1, 0])
    assert plane.offset == pytest.approx(1.65)
    assert np.allclose(plane.coefficients(), [0, 1, 0, 1.65])


def test_default_plane_height():
    assert default_plane().height_at(3.0, 20.0) == pytest.approx(1.65)


def test_invalid_planes():
    with pytest.raises(ValueError):
        GroundPlane.from_coefficients([1, 0, 0, 0])
    with pytest.raises(ValueError):
        GroundPlane.from_coefficients([0, 0, 0, 1])
    with pytest.raises(ValueError):
        GroundPlane(np.array([0, 2.0, 0]), 1.0)
