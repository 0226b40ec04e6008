"""
shapefit - joint 3D pose and shape refinement of objects seen by a stereo camera.

A PCA shape space of signed-distance grids is aligned to stereo images through
a silhouette energy, a photometric stereo-consistency energy and ground-plane
priors, minimised with damped Gauss-Newton on SE(3) x R^K.
"""

import os
import sys
import traceback

from . import logger


def global_exception_handler(exc_type, exc_value, exc_traceback):
    """Route uncaught exceptions through the shapefit log before the default hook."""
    logger.error(f"uncaught {exc_type.__name__}: {exc_value}\n"
                 + "".join(traceback.format_exception(exc_type, exc_value, exc_traceback)))
    sys.__excepthook__(exc_type, exc_value, exc_traceback)


# Opt-in: SHAPEFIT_DEBUG=1
if os.getenv("SHAPEFIT_DEBUG", "0") == "1":
    sys.excepthook = global_exception_handler

__version__ = "0.1.0"

from .config_loader import ShapeFitConfigLoader, load_config
from .config_models import (
    EnergyBreakdown,
    FitStatus,
    GridConfig,
    RenderConfig,
    ResultRecord,
    SamplingConfig,
    ShapeFitConfig,
    SolverConfig,
)
from .errors import (
    BehindCameraError,
    BundleParseError,
    DegenerateInputError,
    GridFormatError,
    ShapeFitError,
    ShapeModelError,
)
from .geometry import CameraIntrinsics, Pose, StereoRig, Twist, se3_exp, se3_log
from .images import GrayImage, StereoFrame
from .metrics import ShapeMetrics, shape_metrics
from .priors import GroundPlane, default_plane
from .sampling import Detection, adaptive_sample
from .sdf_grid import SdfGrid, raycast, sample
from .shape_model import ShapeModel, build_model, decode, encode
from .solver import FitResult, fit_frame, fit_instance, gauss_newton_fit

__all__ = [
    # configuration
    "ShapeFitConfig",
    "SolverConfig",
    "SamplingConfig",
    "GridConfig",
    "RenderConfig",
    "ShapeFitConfigLoader",
    "load_config",
    # records
    "EnergyBreakdown",
    "FitStatus",
    "ResultRecord",
    # errors
    "ShapeFitError",
    "DegenerateInputError",
    "BehindCameraError",
    "ShapeModelError",
    "GridFormatError",
    "BundleParseError",
    # geometry
    "Pose",
    "Twist",
    "se3_exp",
    "se3_log",
    "CameraIntrinsics",
    "StereoRig",
    # shapes
    "SdfGrid",
    "sample",
    "raycast",
    "ShapeModel",
    "build_model",
    "decode",
    "encode",
    # fitting
    "GrayImage",
    "StereoFrame",
    "Detection",
    "adaptive_sample",
    "GroundPlane",
    "default_plane",
    "FitResult",
    "fit_frame",
    "fit_instance",
    "gauss_newton_fit",
    # evaluation
    "ShapeMetrics",
    "shape_metrics",
]
