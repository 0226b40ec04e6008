#!/usr/bin/env python3
"""
Jacobian oracle - central finite differences against every analytic Jacobian.

Each residual family registers a case builder. A case is a residual function
of the parameter increment theta = [delta xi (6); delta z (K)], the analytic
Jacobian at theta = 0, per-parameter steps and an optional signature of the
interpolation cells the residual reads. Trilinear and bilinear interpolants
are only smooth within a cell, so configurations whose perturbed evaluations
change cells are redrawn.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Optional

import numpy as np

from . import logger
from .config_models import GridConfig, SolverConfig
from .geometry import CameraView, Pose, StereoRig, project_points, se3_exp
from .images import GrayImage
from .photometric import cast_depths, patch_offsets, photometric_terms, warp_pixels
from .priors import GroundPlane, rotation_prior, shape_prior, translation_prior
from .sdf_grid import cell_index
from .shape_model import ShapeModel
from .silhouette import sample_depths_for, silhouette_terms
from .synth import build_preset_model, default_car_pose, surface_point_cloud, synthetic_rig

XI_STEP = 1e-6
Z_STEP = 1e-5
MAX_DRAWS_PER_CASE = 50


def finite_difference_jacobian(fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray,
                               steps) -> np.ndarray:
    """Central differences of fn around theta, shape (R, P)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), theta.shape)
    columns = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = steps[k]
        plus = np.atleast_1d(np.asarray(fn(theta + e), dtype=np.float64))
        minus = np.atleast_1d(np.asarray(fn(theta - e), dtype=np.float64))
        columns.append((plus - minus) / (2.0 * steps[k]))
    return np.stack(columns, axis=-1)


def default_steps(shape_dim: int) -> np.ndarray:
    return np.concatenate([np.full(6, XI_STEP), np.full(shape_dim, Z_STEP)])


@dataclass
class JacobianCase:
    residual: Callable[[np.ndarray], np.ndarray]
    analytic: np.ndarray
    steps: np.ndarray
    signature: Optional[Callable[[np.ndarray], Hashable]] = None


@dataclass
class CheckContext:
    """Shared fixtures: a coarse car model, the synthetic rig and two textured images."""
    model: ShapeModel
    rig: StereoRig
    left: GrayImage
    right: GrayImage
    cloud: np.ndarray
    solver: SolverConfig = field(default_factory=SolverConfig)

    @classmethod
    def build(cls, seed: int = 0, shape_dim: int = 3) -> "CheckContext":
        grid = GridConfig(dims=(30, 20, 30), voxel_size=1.0 / 6.0)
        model = build_preset_model("car", shape_dim, grid, count=8, seed=seed)
        rig = synthetic_rig()
        h, w = 240, 320
        vs, us = np.mgrid[0:h, 0:w].astype(np.float64)
        left = GrayImage(0.5 + 0.25 * np.sin(us / 9.0) * np.cos(vs / 7.0) + 0.1 * np.sin((us + vs) / 13.0))
        right = GrayImage(0.5 + 0.2 * np.cos(us / 8.0 + 0.3) * np.sin(vs / 6.0) + 0.15 * np.sin(us / 17.0))
        return cls(model=model, rig=rig, left=left, right=right, cloud=surface_point_cloud(model.mean))


@dataclass
class JacobianCheck:
    name: str
    rel_tol: float
    abs_tol: float
    build_case: Callable[[np.random.Generator, CheckContext], Optional[JacobianCase]]


@dataclass
class CheckReport:
    name: str
    configurations: int
    failures: int
    worst_error: float
    worst_relative: float
    redrawn: int

    @property
    def passed(self) -> bool:
        return self.configurations > 0 and self.failures == 0


JACOBIAN_CHECKS: Dict[str, JacobianCheck] = {}


def register_check(name: str, rel_tol: float, abs_tol: float):
    def decorator(fn):
        JACOBIAN_CHECKS[name] = JacobianCheck(name, rel_tol, abs_tol, fn)
        return fn
    return decorator


# === Random configurations ===

def random_pose(rng: np.random.Generator) -> Pose:
    """Object-to-camera pose of an object in front of the synthetic rig."""
    base = default_car_pose(rng.uniform(-180.0, 180.0),
                            (rng.uniform(-1.5, 1.5), rng.uniform(1.45, 1.85), rng.uniform(8.0, 13.0)))
    tilt = se3_exp(np.concatenate([np.zeros(3), rng.normal(0, 0.05, 3)])).rotation
    return Pose(tilt @ base.rotation, base.translation)


def random_plane(rng: np.random.Generator) -> GroundPlane:
    return GroundPlane.from_coefficients([rng.normal(0, 0.05), -1.0, rng.normal(0, 0.05),
                                          rng.uniform(1.4, 1.9)])


def _perturbed(camera_to_object: Pose, z: np.ndarray, theta: np.ndarray):
    return se3_exp(theta[:6]).compose(camera_to_object), z + theta[6:]


def _cells(model: ShapeModel, points: np.ndarray) -> bytes:
    return cell_index(model.mean, points).tobytes()


def _boundary_pixel(rng: np.random.Generator, ctx: CheckContext, object_to_camera: Pose,
                    view: CameraView, jitter: float) -> Optional[np.ndarray]:
    point = ctx.cloud[rng.integers(ctx.cloud.shape[0])]
    in_view = view.to_left.inverse().transform(object_to_camera.transform(point))
    uv, valid = project_points(view.intrinsics, in_view[None])
    if not valid[0]:
        return None
    return uv[0] + rng.uniform(-jitter, jitter, 2)


# === Registered families ===

@register_check("silhouette", rel_tol=1e-3, abs_tol=1e-6)
def silhouette_case(rng: np.random.Generator, ctx: CheckContext) -> Optional[JacobianCase]:
    model, cfg = ctx.model, ctx.solver
    object_to_camera = random_pose(rng)
    camera_to_object = object_to_camera.inverse()
    z = rng.normal(0, 0.5, model.K) * model.sigmas
    view = ctx.rig.view("left" if rng.random() < 0.5 else "right")
    pixel = _boundary_pixel(rng, ctx, object_to_camera, view, jitter=3.0)
    if pixel is None:
        return None
    pixel = pixel[None]
    p_fg = np.clip([rng.random()], cfg.eps_prob, 1 - cfg.eps_prob)
    depths = sample_depths_for(model, z, camera_to_object, view, pixel, cfg.ray_samples, cfg.sample_spacing)
    if np.isnan(depths[0, 0]):
        return None
    origin_l, dirs_l = view.rays_in_left(pixel)
    row = depths[0][~np.isnan(depths[0])]
    samples_l = origin_l + row[:, None] * dirs_l[0]
    options = dict(sample_depths=depths, sharpness=cfg.silhouette_sharpness)

    def residual(theta):
        pose, zz = _perturbed(camera_to_object, z, theta)
        return silhouette_terms(model, zz, pose, view, pixel, p_fg, cfg.zeta, cfg.ray_samples,
                                cfg.eps_prob, with_jacobian=False, **options).values

    def signature(theta):
        pose, _ = _perturbed(camera_to_object, z, theta)
        pts = pose.transform(samples_l)
        inside = np.all((pts >= model.mean.origin) & (pts <= model.mean.upper))
        return (bool(inside), _cells(model, pts))

    if not signature(np.zeros(6 + model.K))[0]:
        return None
    analytic = silhouette_terms(model, z, camera_to_object, view, pixel, p_fg, cfg.zeta,
                                cfg.ray_samples, cfg.eps_prob, **options).jacobian
    return JacobianCase(residual, analytic, default_steps(model.K), signature)


@register_check("photometric", rel_tol=5e-3, abs_tol=1e-6)
def photometric_case(rng: np.random.Generator, ctx: CheckContext) -> Optional[JacobianCase]:
    model, cfg, rig = ctx.model, ctx.solver, ctx.rig
    object_to_camera = random_pose(rng)
    camera_to_object = object_to_camera.inverse()
    z = rng.normal(0, 0.5, model.K) * model.sigmas
    pixel = _boundary_pixel(rng, ctx, object_to_camera, rig.view("left"), jitter=0.0)
    if pixel is None:
        return None
    pixel = np.round(pixel)[None]
    offsets = patch_offsets(cfg.patch_pattern)

    def hits_at(theta):
        pose, zz = _perturbed(camera_to_object, z, theta)
        return cast_depths(model, zz, pose, rig, pixel, cfg.cos_min)

    base = hits_at(np.zeros(6 + model.K))
    # keep away from the grazing clamp, where the derivative is deliberately biased
    if not base.hit[0] or base.normal_cos[0] < 2.0 * cfg.cos_min:
        return None
    patch = pixel + offsets

    def residual(theta):
        hits = hits_at(theta)
        if not hits.hit[0]:
            return np.full(offsets.shape[0], np.nan)
        uv, _, _, _ = warp_pixels(rig, patch, np.full(offsets.shape[0], hits.depth[0]))
        return ctx.right.sample_many(uv)[0] - ctx.left.sample_many(patch)[0]

    def signature(theta):
        hits = hits_at(theta)
        if not hits.hit[0]:
            return None
        uv, front, _, _ = warp_pixels(rig, patch, np.full(offsets.shape[0], hits.depth[0]))
        inside = bool(np.all(front & ctx.right.contains(uv) & ctx.left.contains(patch)))
        return (inside, _cells(model, hits.points_object[:1]), np.floor(uv).astype(np.int64).tobytes())

    if not signature(np.zeros(6 + model.K))[0]:
        return None
    batch = photometric_terms(model, z, camera_to_object, ctx.left, ctx.right, rig, pixel,
                              cfg.huber_gamma, cfg.gradient_c, cfg.patch_pattern, cfg.cos_min)
    return JacobianCase(residual, batch.jacobian, default_steps(model.K), signature)


@register_check("shape_prior", rel_tol=0.0, abs_tol=1e-6)
def shape_prior_case(rng: np.random.Generator, ctx: CheckContext) -> JacobianCase:
    k = ctx.model.K
    sigmas = rng.uniform(0.1, 2.0, k)
    z = rng.normal(0, 1.0, k) * sigmas
    _, analytic = shape_prior(z, sigmas)
    return JacobianCase(lambda theta: shape_prior(z + theta[6:], sigmas)[0], analytic, default_steps(k))


def _pose_prior_case(prior, rng: np.random.Generator, ctx: CheckContext) -> JacobianCase:
    k = ctx.model.K
    camera_to_object = random_pose(rng).inverse()
    plane = random_plane(rng)
    _, analytic = prior(camera_to_object, plane, k)

    def residual(theta):
        return prior(se3_exp(theta[:6]).compose(camera_to_object), plane, k)[0]

    return JacobianCase(residual, analytic[None], default_steps(k))


@register_check("translation_prior", rel_tol=0.0, abs_tol=1e-6)
def translation_prior_case(rng: np.random.Generator, ctx: CheckContext) -> JacobianCase:
    return _pose_prior_case(translation_prior, rng, ctx)


@register_check("rotation_prior", rel_tol=0.0, abs_tol=1e-6)
def rotation_prior_case(rng: np.random.Generator, ctx: CheckContext) -> JacobianCase:
    return _pose_prior_case(rotation_prior, rng, ctx)


# === Suite ===

def compare(analytic: np.ndarray, numeric: np.ndarray, rel_tol: float, abs_tol: float):
    """Row-wise check |Ja - Jfd| <= rel * max|Jfd| + abs; returns (ok, worst abs, worst rel)."""
    analytic = np.atleast_2d(analytic)
    numeric = np.atleast_2d(numeric)
    error = np.abs(analytic - numeric).max(axis=1)
    scale = np.abs(numeric).max(axis=1)
    ok = bool(np.all(error <= rel_tol * scale + abs_tol))
    relative = float(np.max(error / np.maximum(scale, abs_tol)))
    return ok, float(error.max()), relative


def run_check(check: JacobianCheck, ctx: CheckContext, configurations: int,
              rng: np.random.Generator) -> CheckReport:
    failures, worst, worst_rel, redrawn, done = 0, 0.0, 0.0, 0, 0
    draws = 0
    while done < configurations and draws < configurations * MAX_DRAWS_PER_CASE:
        draws += 1
        case = check.build_case(rng, ctx)
        if case is None:
            redrawn += 1
            continue
        theta0 = np.zeros(case.steps.size)
        if case.signature is not None:
            reference = case.signature(theta0)
            stable = True
            for k in range(theta0.size):
                for sign in (1.0, -1.0):
                    theta = theta0.copy()
                    theta[k] = sign * case.steps[k]
                    if case.signature(theta) != reference:
                        stable = False
                        break
                if not stable:
                    break
            if not stable:
                redrawn += 1
                continue
        numeric = finite_difference_jacobian(case.residual, theta0, case.steps)
        ok, error, relative = compare(case.analytic, numeric, check.rel_tol, check.abs_tol)
        done += 1
        worst, worst_rel = max(worst, error), max(worst_rel, relative)
        if not ok:
            failures += 1
            logger.warning(f"{check.name}: analytic/numeric mismatch {error:.3g} (relative {relative:.3g})")
    return CheckReport(check.name, done, failures, worst, worst_rel, redrawn)


def run_jacobian_suite(configurations: int = 500, seed: int = 0,
                       names: Optional[List[str]] = None,
                       context: Optional[CheckContext] = None) -> List[CheckReport]:
    """Run every registered check (or the named ones) over random configurations."""
    ctx = context or CheckContext.build(seed)
    reports = []
    for name in names or list(JACOBIAN_CHECKS):
        if name not in JACOBIAN_CHECKS:
            raise KeyError(f"unknown Jacobian check {name!r}; registered: {sorted(JACOBIAN_CHECKS)}")
        rng = np.random.default_rng([seed, len(reports)])
        report = run_check(JACOBIAN_CHECKS[name], ctx, configurations, rng)
        logger.info(f"jacobian check {name}: {report.configurations} configurations, "
                    f"{report.failures} failures, worst {report.worst_error:.3g}")
        reports.append(report)
    return reports
