#!/usr/bin/env python3
"""
Synthetic scenes - analytic SDF shapes, exemplar families, stereo rendering.

Object frame: origin at the bottom centre of the object, y down, length along x.
Rendering casts every pixel against the decoded shape; each view is rendered
on its own so left/right photometric consistency is not built in.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import logger
from .config_models import GridConfig, RenderConfig
from .geometry import CameraIntrinsics, CameraView, Pose, StereoRig, se3_exp
from .images import GrayImage
from .sampling import Detection, clip_bbox
from .sdf_grid import SdfGrid, raycast_many
from .shape_model import ShapeModel, build_model, decode

SdfFunction = Callable[[np.ndarray], np.ndarray]

CAR_WIDTH = 1.7
CAR_LENGTH_RANGE = (3.6, 4.6)
CAR_BODY_RANGE = (0.7, 0.95)
CAR_CABIN_RANGE = (0.35, 0.6)
SPHERE_CENTER = (0.0, -1.0, 0.0)
SPHERE_RADIUS_RANGE = (0.6, 1.0)
PRESETS = ("car", "sphere")


# === Analytic SDFs (negative inside) ===

def sphere_sdf(points: np.ndarray, center, radius: float) -> np.ndarray:
    return np.linalg.norm(points - np.asarray(center), axis=-1) - radius


def ellipsoid_sdf(points: np.ndarray, center, radii) -> np.ndarray:
    """First-order distance bound k0 (k0 - 1) / k1; exact on the surface."""
    p = points - np.asarray(center)
    radii = np.asarray(radii, dtype=np.float64)
    k0 = np.linalg.norm(p / radii, axis=-1)
    k1 = np.linalg.norm(p / radii ** 2, axis=-1)
    return k0 * (k0 - 1.0) / np.maximum(k1, 1e-12)


def rounded_box_sdf(points: np.ndarray, center, half_extents, radius: float) -> np.ndarray:
    q = np.abs(points - np.asarray(center)) - (np.asarray(half_extents) - radius)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside - radius


def car_sdf(points: np.ndarray, length: float, body_height: float, cabin_height: float,
            width: float = CAR_WIDTH) -> np.ndarray:
    """Rounded-box body with a half-ellipsoid cabin on top."""
    body = rounded_box_sdf(points, (0.0, -body_height / 2.0, 0.0),
                           (length / 2.0, body_height / 2.0, width / 2.0), 0.15)
    cabin = ellipsoid_sdf(points, (-0.05 * length, -body_height, 0.0),
                          (0.3 * length, cabin_height, 0.44 * width))
    # keep the cabin's upper half (y above the body top, i.e. smaller y)
    cabin = np.maximum(cabin, points[..., 1] + body_height)
    return np.minimum(body, cabin)


# === Grids and exemplar families ===

def grid_layout(grid_config: Optional[GridConfig] = None) -> Tuple[Tuple[int, int, int], np.ndarray, float]:
    grid_config = grid_config or GridConfig()
    return grid_config.dims, np.asarray(grid_config.resolved_origin()), grid_config.voxel_size


def grid_from_function(fn: SdfFunction, grid_config: Optional[GridConfig] = None) -> SdfGrid:
    """Evaluate fn at every voxel centre and truncate at +-truncation_voxels voxels."""
    grid_config = grid_config or GridConfig()
    dims, origin, voxel = grid_layout(grid_config)
    axes = [origin[i] + voxel * np.arange(dims[i]) for i in range(3)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    limit = grid_config.truncation_voxels * voxel
    values = np.clip(fn(points.reshape(-1, 3)).reshape(dims), -limit, limit)
    return SdfGrid(dims, origin, voxel, values)


def car_parameters(count: int, seed: int = 0) -> np.ndarray:
    """(count, 3) rows of length, body height, cabin height."""
    rng = np.random.default_rng(seed)
    ranges = np.array([CAR_LENGTH_RANGE, CAR_BODY_RANGE, CAR_CABIN_RANGE])
    return ranges[:, 0] + rng.random((count, 3)) * (ranges[:, 1] - ranges[:, 0])


def car_exemplars(count: int = 12, grid_config: Optional[GridConfig] = None,
                  seed: int = 0) -> List[SdfGrid]:
    return [grid_from_function(lambda p, a=a: car_sdf(p, *a), grid_config)
            for a in car_parameters(count, seed)]


def sphere_exemplars(count: int = 4, grid_config: Optional[GridConfig] = None) -> List[SdfGrid]:
    radii = np.linspace(*SPHERE_RADIUS_RANGE, count)
    return [grid_from_function(lambda p, r=r: sphere_sdf(p, SPHERE_CENTER, r), grid_config)
            for r in radii]


def build_preset_model(preset: str, K: int, grid_config: Optional[GridConfig] = None,
                       count: Optional[int] = None, seed: int = 0) -> ShapeModel:
    if preset == "car":
        exemplars = car_exemplars(count or max(12, K + 1), grid_config, seed)
    elif preset == "sphere":
        exemplars = sphere_exemplars(count or max(4, K + 1), grid_config)
    else:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    logger.debug(f"building {preset} model from {len(exemplars)} exemplars")
    return build_model(exemplars, K)


# === Scene rendering ===

def synthetic_rig(render: Optional[RenderConfig] = None) -> StereoRig:
    render = render or RenderConfig()
    intrinsics = CameraIntrinsics(render.focal, render.focal, render.width / 2.0, render.height / 2.0)
    return StereoRig.rectified(intrinsics, render.baseline)


def default_car_pose(yaw_degrees: float = 30.0, translation=(0.5, 1.65, 10.0)) -> Pose:
    """Object-to-camera pose of a car standing on the default ground plane."""
    rotation = se3_exp([0, 0, 0, 0, np.radians(yaw_degrees), 0]).rotation
    return Pose(rotation, translation)


def perturb_pose(pose: Pose, translation: float, yaw_degrees: float,
                 rng: np.random.Generator) -> Pose:
    """Shift by up to `translation` meters in the ground plane and rotate up to `yaw_degrees`."""
    angle = rng.uniform(0, 2 * np.pi)
    shift = rng.uniform(0, translation) * np.array([np.cos(angle), 0.0, np.sin(angle)])
    yaw = np.radians(rng.uniform(-yaw_degrees, yaw_degrees))
    spin = se3_exp([0, 0, 0, 0, yaw, 0]).rotation
    return Pose(spin @ pose.rotation, pose.translation + shift)


def albedo(points_object: np.ndarray) -> np.ndarray:
    """Smooth procedural surface texture, fixed to the object."""
    x, y, z = points_object[:, 0], points_object[:, 1], points_object[:, 2]
    return 0.55 + 0.25 * np.sin(2.1 * x + 0.4) * np.cos(1.7 * z) + 0.12 * np.sin(3.3 * y + 0.5 * x)


def background(dirs_left: np.ndarray) -> np.ndarray:
    """Backdrop at infinity as a function of the left-frame viewing direction."""
    dx, dy = dirs_left[:, 0], dirs_left[:, 1]
    return 0.45 + 0.2 * np.sin(5.0 * dx + 1.3) * np.cos(4.0 * dy) + 0.1 * np.sin(9.0 * dx * dy)


@dataclass
class RenderedView:
    image: GrayImage
    mask: np.ndarray   # bool (H, W)
    depth: np.ndarray  # z-depth in this camera, inf where nothing is hit


@dataclass
class SyntheticScene:
    object_to_camera: Pose
    shape_code: np.ndarray
    grid: SdfGrid
    rig: StereoRig
    left: RenderedView
    right: RenderedView
    cloud: np.ndarray  # GT surface points in the left camera frame

    def view(self, side: str) -> RenderedView:
        return self.left if side == "left" else self.right


def render_view(grid: SdfGrid, object_to_camera: Pose, view: CameraView, width: int, height: int,
                render: Optional[RenderConfig] = None) -> RenderedView:
    render = render or RenderConfig()
    vs, us = np.mgrid[0:height, 0:width]
    pixels = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
    dirs_cam = view.intrinsics.ray_directions(pixels)
    origin_l, dirs_l = view.rays_in_left(pixels)
    camera_to_object = object_to_camera.inverse()
    batch = raycast_many(grid, camera_to_object.transform(origin_l), camera_to_object.rotate(dirs_l))

    intensity = background(dirs_l)
    depth = np.full(pixels.shape[0], np.inf)
    hit = batch.hit
    if hit.any():
        light = np.asarray(render.light_direction, dtype=np.float64)
        light = light / np.linalg.norm(light)
        grads = batch.gradient[hit]
        normals = object_to_camera.rotate(grads / np.linalg.norm(grads, axis=1, keepdims=True))
        shading = render.diffuse * np.maximum(0.0, normals @ light) + render.ambient
        intensity[hit] = albedo(batch.points[hit]) * shading
        depth[hit] = batch.depth[hit] * dirs_cam[hit, 2]
    shape = (height, width)
    return RenderedView(image=GrayImage(np.clip(intensity, 0.0, 1.0).reshape(shape)),
                        mask=hit.reshape(shape), depth=depth.reshape(shape))


def render_scene(model: ShapeModel, z, object_to_camera: Pose, rig: StereoRig,
                 width: int, height: int, light_direction=None,
                 render: Optional[RenderConfig] = None) -> SyntheticScene:
    render = render or RenderConfig()
    if light_direction is not None:
        render = render.model_copy(update={"light_direction": tuple(light_direction)})
    z = model.check_code(z)
    grid = decode(model, z)
    left = render_view(grid, object_to_camera, rig.view("left"), width, height, render)
    right = render_view(grid, object_to_camera, rig.view("right"), width, height, render)
    logger.debug(f"rendered scene: {int(left.mask.sum())} left / {int(right.mask.sum())} right object pixels")
    return SyntheticScene(object_to_camera=object_to_camera, shape_code=z, grid=grid, rig=rig,
                          left=left, right=right, cloud=surface_point_cloud(grid, object_to_camera))


def surface_point_cloud(grid: SdfGrid, pose: Optional[Pose] = None) -> np.ndarray:
    """Zero crossings on voxel edges, linearly interpolated, mapped through pose."""
    values = grid.values
    points = []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        v0, v1 = values[tuple(lo)], values[tuple(hi)]
        flips = np.nonzero((v0 > 0) != (v1 > 0))
        if flips[0].size == 0:
            continue
        a, b = v0[flips], v1[flips]
        t = a / (a - b)
        idx = np.stack(flips, axis=1).astype(np.float64)
        idx[:, axis] += t
        points.append(grid.origin + idx * grid.voxel_size)
    if not points:
        return np.zeros((0, 3))
    cloud = np.concatenate(points)
    return pose.transform(cloud) if pose is not None else cloud


def mask_bbox(mask: np.ndarray, padding: int = 0) -> Optional[Tuple[int, int, int, int]]:
    """Half-open bounding box of a boolean mask, or None when it is empty."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return None
    box = (cols.min() - padding, rows.min() - padding, cols.max() + 1 + padding, rows.max() + 1 + padding)
    return clip_bbox(box, mask.shape)


def scene_detection(scene: SyntheticScene, init_pose: Pose, detection_id: int = 0,
                    padding: int = 6) -> Detection:
    """Detection with ideal masks and a padded bbox around the left mask."""
    box = mask_bbox(scene.left.mask, padding)
    if box is None:
        raise ValueError("object is not visible in the left image")
    return Detection(id=detection_id, bbox=box,
                     mask_left=scene.left.mask.astype(np.float64),
                     mask_right=scene.right.mask.astype(np.float64),
                     init_pose=init_pose, bbox_right=mask_bbox(scene.right.mask, padding))
