#!/usr/bin/env python3
"""
Photometric energy - left-to-right warps through SDF ray-cast depth.

Every pixel of a patch is warped with the depth of the patch's central pixel.
Depth is the z-depth of the left-camera ray hit; its derivative follows the
implicit function theorem on phi(z; exp(delta) T_c^o X) = 0.
"""
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.special import huber

from .errors import BehindCameraError
from .geometry import Pose, StereoRig, project_points, scalar_field_twist_rows
from .images import GrayImage
from .sdf_grid import DEFAULT_COS_MIN, raycast_many
from .shape_model import ShapeModel, decode, decode_many

PATCH_PATTERNS: Dict[int, np.ndarray] = {
    1: np.array([[0, 0]]),
    5: np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]]),
    8: np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1], [-1, -1], [1, 1], [0, 2]]),
}


@dataclass
class DepthHits:
    """Left-camera ray hits of N pixels against the current shape."""
    hit: np.ndarray            # (N,)
    depth: np.ndarray          # (N,) z-depth in the left camera
    points_object: np.ndarray  # (N, 3)
    normal_cos: np.ndarray     # (N,)
    jacobian: np.ndarray       # (N, 6 + K) d depth / d [delta xi; z]


@dataclass
class PhotoResidual:
    """Residuals of one patch; entries with valid False were dropped."""
    values: np.ndarray         # (P,)
    jacobian: np.ndarray       # (P, 6 + K)
    huber_weights: np.ndarray  # (P,)
    grad_weight: float
    valid: np.ndarray          # (P,)


@dataclass
class PhotoBatch:
    """Flattened residual rows of all hit pixels of an instance."""
    values: np.ndarray     # (M,)
    jacobian: np.ndarray   # (M, 6 + K)
    weights: np.ndarray    # (M,) grad weight * huber weight
    grad_weights: np.ndarray
    hit_count: int         # |Omega'|
    patch_size: int


def patch_offsets(pattern: int) -> np.ndarray:
    if pattern not in PATCH_PATTERNS:
        raise ValueError(f"unknown patch pattern {pattern}; choose from {sorted(PATCH_PATTERNS)}")
    return PATCH_PATTERNS[pattern]


def warp_pixels(rig: StereoRig, pixels: np.ndarray, depths: np.ndarray):
    """Warp left pixels at z-depths into the right image.

    Returns right pixels (N, 2), in-front flag (N,), right-camera points (N, 3)
    and d X_r / d depth (N, 3).
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    rays = rig.intrinsics_left.normalized(pixels)
    direction = rig.left_to_right.rotate(rays)
    x_r = direction * depths[:, None] + rig.left_to_right.translation
    uv, valid = project_points(rig.intrinsics_right, x_r)
    return uv, valid & (depths > 0), x_r, direction


def warp_pixel(rig: StereoRig, p, d: float) -> np.ndarray:
    if d <= 0:
        raise BehindCameraError(f"depth must be positive, got {d}")
    uv, valid, _, _ = warp_pixels(rig, np.asarray(p, dtype=np.float64).reshape(1, 2), [d])
    if not valid[0]:
        raise BehindCameraError("warped point is behind the right camera")
    return uv[0]


def warp_depth_derivative(rig: StereoRig, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """d warp / d depth, shape (N, 2)."""
    _, _, x_r, v = warp_pixels(rig, pixels, depths)
    k = rig.intrinsics_right
    zz = x_r[:, 2] ** 2
    du = k.f_u * (v[:, 0] * x_r[:, 2] - x_r[:, 0] * v[:, 2]) / zz
    dv = k.f_v * (v[:, 1] * x_r[:, 2] - x_r[:, 1] * v[:, 2]) / zz
    return np.stack([du, dv], axis=1)


def gradient_weight(grad, c: float) -> float:
    """c^2 / (c^2 + |grad I|^2)."""
    g = np.asarray(grad, dtype=np.float64)
    return c * c / (c * c + np.sum(g * g, axis=-1))


def huber_cost(r, gamma: float):
    """r^2 inside gamma, gamma * (2|r| - gamma) outside."""
    return 2.0 * huber(gamma, np.asarray(r, dtype=np.float64))


def huber_weight(r, gamma: float):
    a = np.abs(np.asarray(r, dtype=np.float64))
    return np.where(a <= gamma, 1.0, gamma / np.maximum(a, gamma))


def cast_depths(model: ShapeModel, z: np.ndarray, camera_to_object: Pose, rig: StereoRig,
                pixels: np.ndarray, cos_min: float = DEFAULT_COS_MIN, grid=None) -> DepthHits:
    """Ray-cast left pixels against the decoded shape and differentiate the z-depth."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    n, k = pixels.shape[0], model.K
    grid = decode(model, z) if grid is None else grid
    dirs_c = rig.intrinsics_left.ray_directions(pixels)
    batch = raycast_many(grid, camera_to_object.translation, camera_to_object.rotate(dirs_c),
                         cos_min=cos_min)
    out = DepthHits(hit=batch.hit, depth=np.full(n, np.inf), points_object=batch.points,
                    normal_cos=batch.normal_cos, jacobian=np.zeros((n, 6 + k)))
    if not batch.hit.any():
        return out
    idx = np.nonzero(batch.hit)[0]
    out.depth[idx] = batch.depth[idx] * dirs_c[idx, 2]
    pts = batch.points[idx]
    decoded = decode_many(model, z, pts)
    grads = decoded.gradient
    # d t / d theta = [grad, X x grad, v(X)] / (|grad| cos theta), cos clamped
    denom = batch.normal_cos[idx] * np.linalg.norm(grads, axis=1)
    rows = np.concatenate([scalar_field_twist_rows(pts, grads), decoded.basis], axis=1)
    out.jacobian[idx] = rows * (dirs_c[idx, 2] / np.where(denom > 0, denom, np.inf))[:, None]
    return out


def photometric_residual(left: GrayImage, right: GrayImage, rig: StereoRig, p, depth: float,
                         pattern: int = 8) -> PhotoResidual:
    """Residuals I_r(warp(p~, d_p)) - I_l(p~) over the patch around p (no Jacobian)."""
    center = np.asarray(p, dtype=np.float64).reshape(2)
    patch = center + patch_offsets(pattern)
    n = patch.shape[0]
    values = np.zeros(n)
    valid = left.contains(patch)
    if depth > 0 and np.isfinite(depth):
        uv, front, _, _ = warp_pixels(rig, patch, np.full(n, depth))
        sampled, inside = right.sample_many(uv)
        valid &= front & inside
        ref, _ = left.sample_many(patch)
        values = np.where(valid, sampled - ref, 0.0)
    else:
        valid[:] = False
    return PhotoResidual(values=values, jacobian=np.zeros((n, 0)), huber_weights=np.ones(n),
                         grad_weight=1.0, valid=valid)


def photometric_jacobian(right: GrayImage, rig: StereoRig, patch_pixels: np.ndarray,
                         depth: float, depth_row: np.ndarray) -> np.ndarray:
    """grad I_r(warp) . d warp / d depth . d depth / d theta for each patch pixel."""
    patch_pixels = np.atleast_2d(patch_pixels)
    depths = np.full(patch_pixels.shape[0], depth)
    uv, _, _, _ = warp_pixels(rig, patch_pixels, depths)
    d_warp = warp_depth_derivative(rig, patch_pixels, depths)
    grad_r = right.interpolant_gradient(uv)
    d_r_d_depth = np.sum(grad_r * d_warp, axis=1)
    return d_r_d_depth[:, None] * np.asarray(depth_row)[None, :]


def photometric_terms(model: ShapeModel, z: np.ndarray, camera_to_object: Pose,
                      left: GrayImage, right: GrayImage, rig: StereoRig, pixels: np.ndarray,
                      gamma: float, c: float, pattern: int = 8, cos_min: float = DEFAULT_COS_MIN,
                      with_jacobian: bool = True, hits: Optional[DepthHits] = None) -> PhotoBatch:
    """Robustly weighted photometric rows for all sampled pixels that hit the shape."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    offsets = patch_offsets(pattern)
    n_p = offsets.shape[0]
    width = 6 + model.K
    if hits is None:
        hits = cast_depths(model, z, camera_to_object, rig, pixels, cos_min)
    idx = np.nonzero(hits.hit)[0]
    if idx.size == 0:
        return PhotoBatch(values=np.zeros(0), jacobian=np.zeros((0, width)), weights=np.zeros(0),
                          grad_weights=np.zeros(0), hit_count=0, patch_size=n_p)

    centers = pixels[idx]
    patch = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    depths = np.repeat(hits.depth[idx], n_p)
    uv, front, _, _ = warp_pixels(rig, patch, depths)
    sampled, inside = right.sample_many(uv)
    ref, in_left = left.sample_many(patch)
    valid = front & inside & in_left
    residuals = sampled - ref

    grad_w = gradient_weight(left.central_gradient(centers), c)
    weights = np.repeat(grad_w, n_p) * huber_weight(residuals, gamma)

    jac = np.zeros((0, width))
    if with_jacobian:
        d_warp = warp_depth_derivative(rig, patch, depths)
        d_r_d_depth = np.sum(right.interpolant_gradient(uv) * d_warp, axis=1)
        jac = d_r_d_depth[:, None] * np.repeat(hits.jacobian[idx], n_p, axis=0)
        jac = jac[valid]
    return PhotoBatch(values=residuals[valid], jacobian=jac, weights=weights[valid],
                      grad_weights=np.repeat(grad_w, n_p)[valid], hit_count=idx.size,
                      patch_size=n_p)


def photometric_energy(batch: PhotoBatch, gamma: float) -> float:
    """sum(omega_p * h(r)) / (|Omega'| |N_p|); zero when nothing hits."""
    if batch.hit_count == 0:
        return 0.0
    return float(np.sum(batch.grad_weights * huber_cost(batch.values, gamma))
                 / (batch.hit_count * batch.patch_size))
