#!/usr/bin/env python3
"""
Pydantic models for shapefit configuration and result records.

Config models carry every tunable constant of the pipeline. Record models
describe what goes in and out of the command line tools (bundles, detections,
results); they are JSON-serialisable and re-parse losslessly.
"""
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# === Configuration ===

class SolverConfig(BaseModel):
    """Energy weights, term constants and Gauss-Newton/Levenberg-Marquardt settings."""
    model_config = ConfigDict(extra="forbid")

    lambda_silh: float = Field(12.0, ge=0, description="Weight of each image's silhouette energy")
    lambda_shape: float = Field(10.0, ge=0, description="Shape prior weight (lambda 1)")
    lambda_translation: float = Field(10.0, ge=0, description="Ground-plane translation prior weight (lambda 2)")
    lambda_rotation: float = Field(1e7, ge=0, description="Ground-normal rotation prior weight (lambda 3)")
    zeta: float = Field(75.0, gt=0, description="Silhouette contour sharpness, per meter")
    huber_gamma: float = Field(0.03, gt=0, description="Huber threshold on photometric residuals")
    gradient_c: float = Field(0.2, gt=0, description="Image-gradient weighting constant")
    eps_prob: float = Field(1e-3, gt=0, lt=0.5, description="Probability floor for masks")
    eps_irls: float = Field(1e-6, gt=0, description="Residual floor of the IRLS weight")
    cos_min: float = Field(0.05, gt=0, le=1, description="Lower clamp on the ray/normal cosine")
    ray_samples: int = Field(32, ge=1, description="Fewest interior silhouette samples per ray")
    sample_spacing: float = Field(0.5, gt=0, description="Silhouette ray sample step, in voxels")
    silhouette_sharpness: Optional[float] = Field(
        10.0, ge=1, description="Soft-minimum sharpness of the per-ray aggregate; null keeps the plain product")
    patch_pattern: Literal[1, 5, 8] = Field(8, description="Photometric patch size")
    max_iterations: int = Field(50, ge=1)
    step_tolerance: float = Field(1e-6, gt=0)
    energy_tolerance: float = Field(1e-4, ge=0, description="Relative energy change treated as stationary")
    damping_initial: float = Field(1e-4, gt=0)
    damping_up: float = Field(10.0, gt=1)
    damping_down: float = Field(2.0, gt=1)
    damping_max: float = Field(1e10, gt=0)
    max_rejections: int = Field(5, ge=1, description="Consecutive rejected steps before divergence")
    pose_warmup_iterations: int = Field(0, ge=0, description="Leading iterations that update the pose only")
    use_silhouette: bool = True
    use_photometric: bool = True
    threads: int = Field(1, ge=1, description="Instances fitted concurrently per frame")


class SamplingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    coarse_cell: int = Field(32, ge=2)
    fine_cell: int = Field(8, ge=1)
    density: float = Field(0.05, gt=0, le=1, description="Target fraction of bbox pixels")
    gradient_offset: float = Field(0.01, gt=0, description="Excess over the cell median needed in round 1")
    max_repasses: int = Field(3, ge=0)
    occlusion_threshold: float = Field(0.5, gt=0, lt=1)
    right_bbox_padding: int = Field(4, ge=0)

    @model_validator(mode="after")
    def check_cells(self):
        if self.fine_cell > self.coarse_cell:
            raise ValueError("fine_cell must not exceed coarse_cell")
        return self


class GridConfig(BaseModel):
    """Layout of synthetic and model grids in the object frame (y down, origin at the car's bottom centre)."""
    model_config = ConfigDict(extra="forbid")

    dims: Tuple[int, int, int] = (60, 40, 60)
    voxel_size: float = Field(1.0 / 12.0, gt=0)
    origin: Optional[Tuple[float, float, float]] = Field(
        None, description="First voxel centre; derived from dims when omitted")
    top_margin: float = Field(0.3, description="y of the last voxel centre row when origin is derived")
    truncation_voxels: float = Field(10.0, gt=0)

    @field_validator("dims")
    @classmethod
    def check_dims(cls, value):
        if min(value) < 2:
            raise ValueError("grid needs at least 2 voxels per axis")
        return value

    def resolved_origin(self) -> Tuple[float, float, float]:
        if self.origin is not None:
            return self.origin
        nx, ny, nz = self.dims
        v = self.voxel_size
        return (-(nx - 1) * v / 2.0, self.top_margin - (ny - 1) * v, -(nz - 1) * v / 2.0)


class RenderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(320, ge=8)
    height: int = Field(240, ge=8)
    focal: float = Field(300.0, gt=0)
    baseline: float = Field(0.54, gt=0)
    light_direction: Tuple[float, float, float] = (-0.3, -0.8, -0.5)
    diffuse: float = Field(0.7, ge=0)
    ambient: float = Field(0.3, ge=0)


class ShapeFitConfig(BaseModel):
    """Top-level configuration, one section per concern."""
    model_config = ConfigDict(extra="forbid")

    solver: SolverConfig = Field(default_factory=SolverConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    shape_dim: int = Field(5, ge=1, description="K, number of PCA components")
    seed: int = 0


# === Records ===

class FitStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    DIVERGED = "diverged"
    SKIPPED_OCCLUDED = "skipped-occluded"
    FAILED = "failed"


Matrix4 = List[List[float]]


def _check_matrix4(value: Matrix4) -> Matrix4:
    if len(value) != 4 or any(len(row) != 4 for row in value):
        raise ValueError("pose must be a 4x4 row-major matrix")
    return value


class DetectionRecord(BaseModel):
    """One instance: bbox, mask files and the initial object-to-camera pose."""
    id: int
    bbox: Tuple[int, int, int, int] = Field(..., description="u_min, v_min, u_max, v_max (max exclusive)")
    bbox_right: Optional[Tuple[int, int, int, int]] = None
    mask_left: str
    mask_right: str
    init_pose: Matrix4

    @field_validator("init_pose")
    @classmethod
    def check_pose(cls, value):
        return _check_matrix4(value)

    @field_validator("bbox", "bbox_right")
    @classmethod
    def check_bbox(cls, value):
        if value is not None and (value[2] <= value[0] or value[3] <= value[1]):
            raise ValueError(f"bbox {value} has no area")
        return value


class GroundTruthRecord(BaseModel):
    pose: Matrix4
    shape_code: List[float]
    cloud: Optional[str] = None

    @field_validator("pose")
    @classmethod
    def check_pose(cls, value):
        return _check_matrix4(value)


class FrameBundleRecord(BaseModel):
    """Everything needed to refine one stereo frame. Paths are relative to the bundle file."""
    left: str
    right: str
    calibration: str
    detections: str
    model: str
    plane: Optional[str] = None
    ground_truth: Dict[int, GroundTruthRecord] = Field(default_factory=dict)


class EnergyBreakdown(BaseModel):
    """Weighted energy terms; total is their sum."""
    silhouette_left: float = 0.0
    silhouette_right: float = 0.0
    photometric: float = 0.0
    shape: float = 0.0
    translation: float = 0.0
    rotation: float = 0.0

    @property
    def total(self) -> float:
        return (self.silhouette_left + self.silhouette_right + self.photometric
                + self.shape + self.translation + self.rotation)


class MetricsRecord(BaseModel):
    completeness: float
    accuracy: float
    f1: float
    rmse: float
    threshold: float


class ResultRecord(BaseModel):
    id: int
    status: FitStatus
    pose: Matrix4 = Field(..., description="Refined object-to-camera transform, row-major")
    shape_code: List[float]
    energies: EnergyBreakdown
    iterations: int
    message: str = ""
    energy_history: List[float] = Field(default_factory=list)
    metrics: Optional[MetricsRecord] = None


class FrameResultsRecord(BaseModel):
    bundle: str
    results: List[ResultRecord]
