#!/usr/bin/env python3
"""
Shared fixtures: a coarse car model, small synthetic stereo scenes and a
sphere grid. Grids here use 1/6 m voxels so rendering stays fast.
"""
import numpy as np
import pytest

from shapefit.config_models import GridConfig, RenderConfig, SamplingConfig, SolverConfig
from shapefit.images import StereoFrame
from shapefit.sdf_grid import SdfGrid
from shapefit.synth import (
    build_preset_model,
    default_car_pose,
    render_scene,
    scene_detection,
    synthetic_rig,
)


@pytest.fixture(scope="session")
def coarse_grid():
    return GridConfig(dims=(30, 20, 30), voxel_size=1.0 / 6.0)


@pytest.fixture(scope="session")
def small_render():
    return RenderConfig(width=160, height=120, focal=150.0)


@pytest.fixture(scope="session")
def car_model(coarse_grid):
    return build_preset_model("car", 3, coarse_grid, count=8, seed=0)


@pytest.fixture(scope="session")
def small_rig(small_render):
    return synthetic_rig(small_render)


@pytest.fixture(scope="session")
def car_scene(car_model, small_rig, small_render):
    z = np.array([0.4, -0.3, 0.2]) * car_model.sigmas
    return render_scene(car_model, z, default_car_pose(), small_rig,
                        small_render.width, small_render.height, render=small_render)


@pytest.fixture(scope="session")
def car_frame(car_scene):
    return StereoFrame(car_scene.left.image, car_scene.right.image, car_scene.rig)


@pytest.fixture
def car_detection(car_scene):
    return scene_detection(car_scene, car_scene.object_to_camera)


@pytest.fixture
def fast_solver():
    return SolverConfig(max_iterations=8)


@pytest.fixture
def sampling_config():
    return SamplingConfig()


def _sphere_grid(radius=0.5, center=(0.01, 0.01, 0.0), voxel=0.02, half_extent=1.0):
    """Untruncated analytic sphere on a cubic grid centred on the origin."""
    n = int(round(2 * half_extent / voxel)) + 1
    axis = -half_extent + voxel * np.arange(n)
    points = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    values = np.linalg.norm(points - np.asarray(center), axis=-1) - radius
    return SdfGrid((n, n, n), (-half_extent,) * 3, voxel, values)


@pytest.fixture(scope="session")
def sphere_grid():
    return _sphere_grid()


@pytest.fixture
def make_sphere_grid():
    return _sphere_grid
