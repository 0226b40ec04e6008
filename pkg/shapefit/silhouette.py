#!/usr/bin/env python3
"""
Silhouette energy - differentiable projection pi, per-pixel residual and Jacobian.

The SDF is negative inside, so each ray sample contributes the factor
C = 1 / (exp(-phi * zeta) + 1). With no sharpness pi = 1 - prod(C), kept in
log space as log(1 - pi) = sum(log_expit(zeta * phi)). With a sharpness k the
samples u = zeta * phi are first reduced to the soft minimum
u* = -log(sum(exp(-k u))) / k and pi = 1 - expit(u*). k = 1 tracks the
product on exterior rays; large k depends only on how close the ray passes
to the surface, however many samples graze it.

Samples sit on a depth lattice fixed in the camera frame, inside the padded
bounding box of the decoded shape; derivatives move them with the pose
through X_o = exp(delta) * T_c^o * X_c.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_expit

from .geometry import CameraView, Pose, scalar_field_twist_rows
from .sdf_grid import clip_rays
from .shape_model import ShapeModel, decode, decode_many

BOX_INSET = 1e-4
BOX_PADDING_VOXELS = 2.0
DEFAULT_SHARPNESS = 10.0
DEFAULT_SAMPLE_SPACING = 0.5


@dataclass
class RaySampleSet:
    """Samples of one ray, ordered by depth along the ray."""
    depths: np.ndarray          # (S,) ray parameter in the camera frame
    points_object: np.ndarray   # (S, 3)
    values: np.ndarray          # (S,) phi
    factors: np.ndarray         # (S,) C(phi)
    gradient: np.ndarray        # (S, 3) object-frame grad phi
    basis: np.ndarray           # (S, K)
    oob: np.ndarray             # (S,)

    @property
    def empty(self) -> bool:
        return self.depths.size == 0


@dataclass
class SilhouetteResidual:
    value: float
    jacobian: np.ndarray  # (6 + K,)
    irls_weight: float
    pi: float


@dataclass
class SilhouetteBatch:
    """Vectorised silhouette terms for N pixels of one view."""
    values: np.ndarray     # (N,)
    jacobian: np.ndarray   # (N, 6 + K)
    pi: np.ndarray         # (N,)
    depths: np.ndarray     # (N, S), NaN-padded; all-NaN rows for rays missing the object box
    hits_box: np.ndarray   # (N,)


def ray_projection(u: np.ndarray, valid: np.ndarray,
                   sharpness: Optional[float] = DEFAULT_SHARPNESS) -> Tuple[np.ndarray, np.ndarray]:
    """log(1 - pi) per row of u = zeta * phi and d pi / d u per sample.

    Rows need at least one valid sample; invalid samples get zero derivative.
    """
    if sharpness is None:
        log_factors = np.where(valid, log_expit(u), 0.0)
        log_one_minus_pi = log_factors.sum(axis=1)
        d_pi = -np.exp(log_one_minus_pi)[:, None] * expit(-u)
        return log_one_minus_pi, np.where(valid, d_pi, 0.0)
    masked = np.where(valid, u, np.inf)
    lowest = masked.min(axis=1)
    weights = np.exp(-sharpness * (masked - lowest[:, None]))
    total = weights.sum(axis=1)
    u_star = lowest - np.log(total) / sharpness
    weights /= total[:, None]
    # d pi / d u* = -pi (1 - pi)
    d_pi = -(expit(u_star) * expit(-u_star))[:, None] * weights
    return log_expit(u_star), d_pi


def pi_from_values(phi: Sequence[float], zeta: float,
                   sharpness: Optional[float] = DEFAULT_SHARPNESS) -> float:
    """Projection value for a ray with the given SDF samples."""
    phi = np.asarray(phi, dtype=np.float64).reshape(1, -1)
    if phi.size == 0:
        return 0.0
    log_one_minus_pi, _ = ray_projection(zeta * phi, np.ones(phi.shape, dtype=bool), sharpness)
    return float(-np.expm1(log_one_minus_pi[0]))


def factor_derivative(phi, zeta: float):
    """dC/dphi = zeta * C * (1 - C)."""
    c = expit(zeta * np.asarray(phi, dtype=np.float64))
    return zeta * c * (1.0 - c)


def silhouette_residual(pi: float, p_fg: float, p_bg: float, eps_prob: float = 1e-3) -> float:
    """-log(pi * p_fg + (1 - pi) * p_bg) with both probabilities floored."""
    p_fg = max(p_fg, eps_prob)
    p_bg = max(p_bg, eps_prob)
    return float(-np.log(pi * p_fg + (1.0 - pi) * p_bg))


def mask_probabilities(mask_values: np.ndarray, eps_prob: float) -> Tuple[np.ndarray, np.ndarray]:
    p_fg = np.clip(np.asarray(mask_values, dtype=np.float64), eps_prob, 1.0 - eps_prob)
    return p_fg, 1.0 - p_fg


def object_box(model: ShapeModel, z: np.ndarray,
               padding: float = BOX_PADDING_VOXELS) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Object-frame box around the voxels with Phi(z) <= 0, padded and kept inside the grid.

    None when the decoded shape has no interior voxel.
    """
    grid = decode(model, z)
    inside = np.argwhere(grid.values <= 0.0)
    if inside.size == 0:
        return None
    pad = padding * grid.voxel_size
    lower = np.maximum(grid.origin + inside.min(axis=0) * grid.voxel_size - pad, grid.origin)
    upper = np.minimum(grid.origin + inside.max(axis=0) * grid.voxel_size + pad, grid.upper)
    return lower, upper


def sample_depths_for(model: ShapeModel, z: np.ndarray, camera_to_object: Pose, view: CameraView,
                      pixels: np.ndarray, ray_samples: int = 32,
                      spacing: float = DEFAULT_SAMPLE_SPACING) -> np.ndarray:
    """Ray parameters over the object box: both clip endpoints and a lattice in between.

    Interior samples sit at integer multiples of the step, so they keep their
    camera-frame positions while the box slides along the ray. The step is
    spacing voxels, halved until every ray gets at least ray_samples
    interior samples. Returns (N, S) NaN-padded rows; rays missing
    the box are all NaN.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    n = pixels.shape[0]
    box = object_box(model, z)
    if box is None:
        return np.full((n, 2), np.nan)
    origin_l, dirs_l = view.rays_in_left(pixels)
    origin_o = camera_to_object.transform(origin_l)
    dirs_o = camera_to_object.rotate(dirs_l)
    t_near, t_far, hits = clip_rays(box[0], box[1], origin_o, dirs_o)
    # endpoints stay strictly inside the interpolable box
    inset = BOX_INSET * model.mean.voxel_size
    t_near, t_far = t_near + inset, t_far - inset
    hits &= t_far > t_near
    if not hits.any():
        return np.full((n, 2), np.nan)

    tn, tf = t_near[hits], t_far[hits]
    base = spacing * model.mean.voxel_size
    halvings = np.maximum(np.ceil(np.log2((ray_samples + 1) * base / (tf - tn))), 0.0)
    step = base / 2.0 ** halvings
    first = np.floor(tn / step) + 1.0
    counts = np.maximum(np.ceil(tf / step) - first, 0).astype(int)
    width = int(counts.max()) + 2
    k = np.arange(width - 2)
    rows = np.full((tn.size, width), np.nan)
    rows[:, 0] = tn
    rows[:, 1:-1] = np.where(k[None, :] < counts[:, None], (first[:, None] + k[None, :]) * step[:, None],
                             np.nan)
    rows[np.arange(tn.size), counts + 1] = tf
    depths = np.full((n, width), np.nan)
    depths[hits] = rows
    return depths


def silhouette_terms(model: ShapeModel, z: np.ndarray, camera_to_object: Pose, view: CameraView,
                     pixels: np.ndarray, p_fg: np.ndarray, zeta: float, ray_samples: int = 32,
                     eps_prob: float = 1e-3, sample_depths: Optional[np.ndarray] = None,
                     with_jacobian: bool = True, sharpness: Optional[float] = DEFAULT_SHARPNESS,
                     spacing: float = DEFAULT_SAMPLE_SPACING) -> SilhouetteBatch:
    """Residuals and Jacobian rows of N pixels seen by one camera.

    p_fg are mask probabilities already clipped to [eps, 1 - eps]; p_bg = 1 - p_fg.
    Passing sample_depths freezes the camera-frame sample positions.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    p_fg = np.asarray(p_fg, dtype=np.float64).reshape(-1)
    p_bg = 1.0 - p_fg
    n, k = pixels.shape[0], model.K
    if sample_depths is None:
        sample_depths = sample_depths_for(model, z, camera_to_object, view, pixels, ray_samples, spacing)
    hits = ~np.isnan(sample_depths[:, 0])

    pi = np.zeros(n)
    jac = np.zeros((n, 6 + k))
    if hits.any():
        origin_l, dirs_l = view.rays_in_left(pixels[hits])
        depths = sample_depths[hits]
        valid = ~np.isnan(depths)
        s = depths.shape[1]
        pts_l = origin_l + np.where(valid, depths, 0.0)[..., None] * dirs_l[:, None, :]
        pts_o = camera_to_object.transform(pts_l.reshape(-1, 3))
        decoded = decode_many(model, z, pts_o, with_gradient=with_jacobian)
        log_one_minus_pi, d_pi = ray_projection(zeta * decoded.values.reshape(-1, s), valid, sharpness)
        pi[hits] = -np.expm1(log_one_minus_pi)
        if with_jacobian:
            area = p_bg[hits] + pi[hits] * (p_fg[hits] - p_bg[hits])
            # d r / d phi_i = -(p_fg - p_bg) / A * zeta * d pi / d u_i
            scale = -(p_fg[hits] - p_bg[hits]) * zeta / area
            dphi = scale[:, None] * d_pi
            dphi = np.where(decoded.oob.reshape(-1, s) | ~valid, 0.0, dphi).reshape(-1)
            rows = np.concatenate([
                scalar_field_twist_rows(pts_o, decoded.gradient),
                decoded.basis,
            ], axis=1)
            jac[hits] = (dphi[:, None] * rows).reshape(-1, s, 6 + k).sum(axis=1)

    values = -np.log(p_bg + pi * (p_fg - p_bg))
    return SilhouetteBatch(values=values, jacobian=jac, pi=pi, depths=sample_depths, hits_box=hits)


def pi_project(model: ShapeModel, z: np.ndarray, camera_to_object: Pose, view: CameraView,
               pixel: Sequence[float], zeta: float, ray_samples: int = 32,
               sample_depths: Optional[np.ndarray] = None,
               sharpness: Optional[float] = DEFAULT_SHARPNESS,
               spacing: float = DEFAULT_SAMPLE_SPACING) -> Tuple[float, RaySampleSet]:
    """Projection value of one pixel and the samples it was computed from."""
    pixel = np.asarray(pixel, dtype=np.float64).reshape(1, 2)
    if sample_depths is None:
        depths = sample_depths_for(model, z, camera_to_object, view, pixel, ray_samples, spacing)[0]
    else:
        depths = np.asarray(sample_depths, dtype=np.float64).reshape(-1)
    depths = depths[~np.isnan(depths)]
    if depths.size == 0:
        empty = np.zeros((0, 3))
        return 0.0, RaySampleSet(depths=np.zeros(0), points_object=empty, values=np.zeros(0),
                                 factors=np.zeros(0), gradient=empty,
                                 basis=np.zeros((0, model.K)), oob=np.zeros(0, dtype=bool))
    origin_l, dirs_l = view.rays_in_left(pixel)
    pts_o = camera_to_object.transform(origin_l + depths[:, None] * dirs_l[0])
    decoded = decode_many(model, z, pts_o)
    samples = RaySampleSet(depths=depths, points_object=pts_o, values=decoded.values,
                           factors=expit(zeta * decoded.values), gradient=decoded.gradient,
                           basis=decoded.basis, oob=decoded.oob)
    return pi_from_values(decoded.values, zeta, sharpness), samples


def silhouette_jacobian(samples: RaySampleSet, pi: float, p_fg: float, p_bg: float,
                        zeta: float, sharpness: Optional[float] = DEFAULT_SHARPNESS) -> np.ndarray:
    """Gradient of r_silh with respect to [delta xi (6); z (K)]."""
    k = samples.basis.shape[1]
    if samples.empty:
        return np.zeros(6 + k)
    area = pi * p_fg + (1.0 - pi) * p_bg
    d_r_d_pi = -(p_fg - p_bg) / area
    u = zeta * samples.values[None]
    _, d_pi_d_u = ray_projection(u, np.ones(u.shape, dtype=bool), sharpness)
    d_phi = np.where(samples.oob, 0.0, d_r_d_pi * zeta * d_pi_d_u[0])
    rows = np.concatenate([scalar_field_twist_rows(samples.points_object, samples.gradient),
                           samples.basis], axis=1)
    return d_phi @ rows


def evaluate_silhouette(model: ShapeModel, z: np.ndarray, camera_to_object: Pose, view: CameraView,
                        pixel: Sequence[float], mask_value: float, zeta: float,
                        ray_samples: int = 32, eps_prob: float = 1e-3, eps_irls: float = 1e-6,
                        sharpness: Optional[float] = DEFAULT_SHARPNESS,
                        spacing: float = DEFAULT_SAMPLE_SPACING) -> SilhouetteResidual:
    """Residual, Jacobian and IRLS weight of a single pixel."""
    p_fg, p_bg = mask_probabilities(mask_value, eps_prob)
    pi, samples = pi_project(model, z, camera_to_object, view, pixel, zeta, ray_samples,
                             sharpness=sharpness, spacing=spacing)
    value = silhouette_residual(pi, float(p_fg), float(p_bg), eps_prob)
    jac = silhouette_jacobian(samples, pi, float(p_fg), float(p_bg), zeta, sharpness)
    return SilhouetteResidual(value=value, jacobian=jac,
                              irls_weight=1.0 / max(value, eps_irls), pi=pi)
