#!/usr/bin/env python3
"""
Solver module - weighted least squares over [delta xi; z] with IRLS and damped Gauss-Newton.

Energy:
    E = lambda_silh (E_silh_left + E_silh_right) + E_photo
        + lambda_1 E_shape + lambda_2 E_trans + lambda_3 E_rot

The silhouette term is linearised through IRLS (omega' = 1 / r, refreshed at
every linearisation point); photometric rows carry Huber and gradient weights.
Normal equations follow H = 2 sum s w J^T J and b = 2 sum s w J^T r.

A fit converges once the damped step drops below step_tolerance or the energy
moves by less than energy_tolerance (relative). It diverges when max_rejections
consecutive steps each raise the energy by more than that.
"""
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from . import logger
from .config_models import EnergyBreakdown, FitStatus, SamplingConfig, SolverConfig
from .geometry import Pose, se3_exp
from .images import StereoFrame
from .photometric import photometric_energy, photometric_terms
from .priors import GroundPlane, default_plane, rotation_prior, shape_prior, translation_prior
from .sampling import Detection, PixelSet, sample_detection
from .sdf_grid import SdfGrid
from .shape_model import ShapeModel, decode
from .silhouette import mask_probabilities, silhouette_terms

SIDES = ("left", "right")
DIAGONAL_FLOOR = 1e-9
ENERGY_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class FitState:
    """Camera-to-object pose T_c^o and shape code z."""
    camera_to_object: Pose
    z: np.ndarray

    @property
    def object_to_camera(self) -> Pose:
        return self.camera_to_object.inverse()

    def step(self, delta: np.ndarray) -> "FitState":
        """T <- exp(hat(delta_xi)) T, z <- z + delta_z."""
        return FitState(se3_exp(delta[:6]).compose(self.camera_to_object), self.z + delta[6:])


@dataclass
class InstanceProblem:
    frame: StereoFrame
    model: ShapeModel
    detection: Detection
    pixels: Dict[str, PixelSet]
    plane: GroundPlane
    config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.mask_values: Dict[str, np.ndarray] = {}
        for side in SIDES:
            px = self.pixels.get(side, PixelSet())
            self.pixels[side] = px
            mask = self.detection.mask(side)
            self.mask_values[side] = mask[px.pixels[:, 1], px.pixels[:, 0]] if not px.empty else np.zeros(0)

    @property
    def dim(self) -> int:
        return 6 + self.model.K

    def initial_state(self) -> FitState:
        """Detection pose and the mean shape."""
        return FitState(self.detection.init_pose.inverse(), np.zeros(self.model.K))


@dataclass
class NormalEquations:
    H: np.ndarray
    b: np.ndarray
    energies: EnergyBreakdown
    irls_check: Tuple[float, float]  # (sum w' r^2, sum r) over silhouette pixels


@dataclass
class FitResult:
    instance_id: int
    status: FitStatus
    object_to_camera: Pose
    z: np.ndarray
    energies: EnergyBreakdown
    iterations: int = 0
    energy_history: List[float] = field(default_factory=list)
    irls_checks: List[Tuple[float, float]] = field(default_factory=list)
    message: str = ""
    shape: Optional[SdfGrid] = None


def irls_weight(r, eps_irls: float = 1e-6):
    """omega' = 1 / max(r, eps); omega' r^2 = r whenever r >= eps."""
    return 1.0 / np.maximum(r, eps_irls)


def _assemble(problem: InstanceProblem, state: FitState, with_jacobian: bool, cfg: SolverConfig):
    model = problem.model
    dim = problem.dim
    H = np.zeros((dim, dim))
    b = np.zeros(dim)
    energies = {}
    weighted_sq, plain = 0.0, 0.0

    def accumulate(J, r, w, scale):
        nonlocal H, b
        H += 2.0 * scale * J.T @ (w[:, None] * J)
        b += 2.0 * scale * J.T @ (w * r)

    for side in SIDES:
        key = f"silhouette_{side}"
        px = problem.pixels[side]
        if not cfg.use_silhouette or px.empty:
            energies[key] = 0.0
            continue
        batch = silhouette_terms(model, state.z, state.camera_to_object, problem.frame.rig.view(side),
                                 px.pixels, mask_probabilities(problem.mask_values[side], cfg.eps_prob)[0],
                                 cfg.zeta, cfg.ray_samples, cfg.eps_prob, with_jacobian=with_jacobian,
                                 sharpness=cfg.silhouette_sharpness, spacing=cfg.sample_spacing)
        scale = cfg.lambda_silh / len(px)
        energies[key] = scale * float(np.sum(batch.values))
        if with_jacobian:
            w = irls_weight(batch.values, cfg.eps_irls)
            weighted_sq += float(np.sum(w * batch.values ** 2))
            plain += float(np.sum(batch.values))
            accumulate(batch.jacobian, batch.values, w, scale)

    energies["photometric"] = 0.0
    left_px = problem.pixels["left"]
    if cfg.use_photometric and not left_px.empty:
        frame = problem.frame
        photo = photometric_terms(model, state.z, state.camera_to_object, frame.left, frame.right,
                                  frame.rig, left_px.pixels, cfg.huber_gamma, cfg.gradient_c,
                                  cfg.patch_pattern, cfg.cos_min, with_jacobian=with_jacobian)
        energies["photometric"] = photometric_energy(photo, cfg.huber_gamma)
        if with_jacobian and photo.hit_count:
            accumulate(photo.jacobian, photo.values, photo.weights,
                       1.0 / (photo.hit_count * photo.patch_size))

    r_shape, j_shape = shape_prior(state.z, model.sigmas)
    r_trans, j_trans = translation_prior(state.camera_to_object, problem.plane, model.K)
    r_rot, j_rot = rotation_prior(state.camera_to_object, problem.plane, model.K)
    energies["shape"] = cfg.lambda_shape * float(r_shape @ r_shape)
    energies["translation"] = cfg.lambda_translation * r_trans ** 2
    energies["rotation"] = cfg.lambda_rotation * r_rot ** 2
    if with_jacobian:
        ones = np.ones(1)
        accumulate(j_shape, r_shape, np.ones(model.K), cfg.lambda_shape)
        accumulate(j_trans[None], np.array([r_trans]), ones, cfg.lambda_translation)
        accumulate(j_rot[None], np.array([r_rot]), ones, cfg.lambda_rotation)

    return H, b, EnergyBreakdown(**energies), (weighted_sq, plain)


def total_energy(problem: InstanceProblem, state: FitState,
                 config: Optional[SolverConfig] = None) -> EnergyBreakdown:
    """True (non-linearised) energy terms at a state; config defaults to the problem's."""
    return _assemble(problem, state, False, config or problem.config)[2]


def build_normal_equations(problem: InstanceProblem, state: FitState,
                           config: Optional[SolverConfig] = None) -> NormalEquations:
    H, b, energies, irls_check = _assemble(problem, state, True, config or problem.config)
    return NormalEquations(H=0.5 * (H + H.T), b=b, energies=energies, irls_check=irls_check)


def solve_damped(H: np.ndarray, b: np.ndarray, mu: float, pose_only: bool = False) -> np.ndarray:
    """Solve (H + mu diag(H)) delta = -b, optionally over the pose block only."""
    n = 6 if pose_only else H.shape[0]
    A = H[:n, :n] + mu * np.diag(np.maximum(np.diag(H)[:n], DIAGONAL_FLOOR))
    delta = np.zeros(H.shape[0])
    try:
        delta[:n] = linalg.cho_solve(linalg.cho_factor(A), -b[:n])
    except linalg.LinAlgError:
        delta[:n] = np.linalg.lstsq(A, -b[:n], rcond=None)[0]
    return delta


def gauss_newton_fit(problem: InstanceProblem, config: Optional[SolverConfig] = None,
                     state: Optional[FitState] = None) -> FitResult:
    """Levenberg-damped Gauss-Newton from the detection pose and the mean shape."""
    cfg = config or problem.config
    state = state or problem.initial_state()
    det_id = problem.detection.id
    eqs = build_normal_equations(problem, state, cfg)
    energy = eqs.energies.total
    history = [energy]
    irls_checks = [eqs.irls_check]
    mu = cfg.damping_initial
    status = FitStatus.MAX_ITERATIONS
    iterations = 0
    message = ""

    for iteration in range(cfg.max_iterations):
        iterations = iteration + 1
        pose_only = iteration < cfg.pose_warmup_iterations
        rejections = 0
        while True:
            delta = solve_damped(eqs.H, eqs.b, mu, pose_only)
            step_norm = float(np.linalg.norm(delta))
            if step_norm < cfg.step_tolerance:
                if not pose_only:
                    status = FitStatus.CONVERGED
                break
            candidate = state.step(delta)
            change = total_energy(problem, candidate, cfg).total - energy
            stationary = abs(change) <= cfg.energy_tolerance * max(energy, ENERGY_FLOOR)
            if change < 0:
                state, energy = candidate, energy + change
                mu /= cfg.damping_down
                if stationary and rejections == 0 and not pose_only:
                    status = FitStatus.CONVERGED
                break
            mu *= cfg.damping_up
            rejections += 1
            if rejections >= cfg.max_rejections or mu > cfg.damping_max:
                # a negligible increase under heavy damping is a stationary point
                if not stationary:
                    status = FitStatus.DIVERGED
                    message = f"{rejections} consecutive rejected steps (mu={mu:.3g})"
                elif not pose_only:
                    status = FitStatus.CONVERGED
                break
        logger.debug(f"instance {det_id} iteration {iterations}: E={energy:.6g} "
                     f"|delta|={step_norm:.3g} mu={mu:.3g}{' (pose only)' if pose_only else ''}")
        if status is not FitStatus.MAX_ITERATIONS:
            break
        eqs = build_normal_equations(problem, state, cfg)
        history.append(eqs.energies.total)
        irls_checks.append(eqs.irls_check)

    energies = total_energy(problem, state, cfg)
    logger.info(f"instance {det_id}: {status.value} after {iterations} iterations, E={energies.total:.6g}")
    return FitResult(instance_id=det_id, status=status, object_to_camera=state.object_to_camera,
                     z=state.z, energies=energies, iterations=iterations, energy_history=history,
                     irls_checks=irls_checks, message=message,
                     shape=decode(problem.model, state.z))


def _unfitted(det: Detection, model: ShapeModel, status: FitStatus, message: str) -> FitResult:
    return FitResult(instance_id=det.id, status=status, object_to_camera=det.init_pose,
                     z=np.zeros(model.K), energies=EnergyBreakdown(), message=message)


def fit_instance(frame: StereoFrame, detections: Sequence[Detection], det: Detection,
                 model: ShapeModel, config: SolverConfig, plane: GroundPlane,
                 sampling: SamplingConfig) -> FitResult:
    pixels = sample_detection((frame.left, frame.right), detections, det, sampling)
    if pixels["left"].empty:
        logger.warning(f"instance {det.id}: bounding box fully occluded, skipping")
        return _unfitted(det, model, FitStatus.SKIPPED_OCCLUDED, "no unoccluded pixels in the left bbox")
    logger.debug(f"instance {det.id}: {len(pixels['left'])} left / {len(pixels['right'])} right pixels")
    problem = InstanceProblem(frame, model, det, pixels, plane, config)
    return gauss_newton_fit(problem)


def fit_frame(frame: StereoFrame, detections: Sequence[Detection], model: ShapeModel,
              config: Optional[SolverConfig] = None, plane: Optional[GroundPlane] = None,
              sampling: Optional[SamplingConfig] = None) -> List[FitResult]:
    """Fit every detection independently; results follow the input order.

    A failing instance yields status failed and never aborts the frame.
    """
    config = config or SolverConfig()
    plane = plane or default_plane()
    sampling = sampling or SamplingConfig()
    detections = list(detections)

    def run(det: Detection) -> FitResult:
        try:
            return fit_instance(frame, detections, det, model, config, plane, sampling)
        except Exception as e:
            logger.error(f"instance {det.id} failed: {type(e).__name__}: {e}\n{traceback.format_exc()}")
            return _unfitted(det, model, FitStatus.FAILED, f"{type(e).__name__}: {e}")

    if not detections:
        return []
    if config.threads == 1:
        return [run(det) for det in detections]
    with ThreadPoolExecutor(max_workers=config.threads, thread_name_prefix="shapefit") as pool:
        return list(pool.map(run, detections))
