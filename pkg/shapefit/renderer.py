#!/usr/bin/env python3
"""
Renderer module - per-frame markdown report and shape overlay images.
"""
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from jinja2 import Environment, FileSystemLoader
from PIL import Image, ImageDraw
from scipy import ndimage

from .config_models import FrameResultsRecord, SolverConfig
from .geometry import Pose
from .images import GrayImage, to_uint8
from .sampling import BBox, clip_bbox
from .shape_model import ShapeModel
from .silhouette import DEFAULT_SHARPNESS, silhouette_terms

TEMPLATE_DIR = Path(__file__).parent / "templates"
CONTOUR_COLOR = (255, 64, 32)
BBOX_COLOR = (64, 200, 255)
ROW_CHUNK = 16


def template_environment() -> Environment:
    return Environment(
        loader=FileSystemLoader(str(TEMPLATE_DIR)),
        trim_blocks=True,
        lstrip_blocks=True,
    )


def render_report(results: FrameResultsRecord, config: Optional[SolverConfig] = None,
                  title: str = "shapefit report") -> str:
    """Markdown summary of one refined frame."""
    template = template_environment().get_template("report.md.j2")
    counts = {}
    for r in results.results:
        counts[r.status.value] = counts.get(r.status.value, 0) + 1
    return template.render(title=title, results=results, counts=counts,
                           config=config or SolverConfig())


def write_report(results: FrameResultsRecord, path: Union[str, Path],
                 config: Optional[SolverConfig] = None) -> None:
    Path(path).write_text(render_report(results, config))


def projection_map(model: ShapeModel, z: np.ndarray, object_to_camera: Pose, rig,
                   bbox: BBox, zeta: float, ray_samples: int = 32,
                   sharpness: Optional[float] = DEFAULT_SHARPNESS) -> np.ndarray:
    """pi for every left-image pixel of bbox, shape (v_max - v_min, u_max - u_min)."""
    u0, v0, u1, v1 = bbox
    camera_to_object = object_to_camera.inverse()
    view = rig.view("left")
    us = np.arange(u0, u1)
    out = np.zeros((v1 - v0, u1 - u0))
    for start in range(v0, v1, ROW_CHUNK):
        vs = np.arange(start, min(start + ROW_CHUNK, v1))
        uu, vv = np.meshgrid(us, vs)
        pixels = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float64)
        batch = silhouette_terms(model, z, camera_to_object, view, pixels, np.full(len(pixels), 0.5),
                                 zeta, ray_samples, with_jacobian=False, sharpness=sharpness)
        out[start - v0:start - v0 + len(vs)] = batch.pi.reshape(len(vs), -1)
    return out


def contour_pixels(pi: np.ndarray, level: float = 0.5) -> np.ndarray:
    """Boolean map of the inner boundary of {pi >= level}."""
    inside = pi >= level
    return inside & ~ndimage.binary_erosion(inside)


def draw_overlay(image: GrayImage, shapes: Sequence[Tuple[BBox, np.ndarray]]) -> Image.Image:
    """Left image in RGB with each bbox outlined and its pi = 0.5 contour drawn."""
    rgb = np.repeat(to_uint8(image.intensities)[..., None], 3, axis=2)
    for (u0, v0, u1, v1), pi in shapes:
        edge = contour_pixels(pi)
        region = rgb[v0:v1, u0:u1]
        region[edge] = CONTOUR_COLOR
    canvas = Image.fromarray(rgb)
    draw = ImageDraw.Draw(canvas)
    for (u0, v0, u1, v1), _ in shapes:
        draw.rectangle([u0, v0, u1 - 1, v1 - 1], outline=BBOX_COLOR)
    return canvas


def save_overlay(image: GrayImage, model: ShapeModel, fits, rig, path: Union[str, Path],
                 zeta: float, ray_samples: int = 32, padding: int = 8,
                 sharpness: Optional[float] = DEFAULT_SHARPNESS) -> None:
    """Overlay of refined shapes; fits pairs each detection bbox with its result."""
    shapes = []
    for bbox, result in fits:
        u0, v0, u1, v1 = bbox
        box = clip_bbox((u0 - padding, v0 - padding, u1 + padding, v1 + padding), image.shape)
        if box[2] <= box[0] or box[3] <= box[1]:
            continue
        pi = projection_map(model, result.z, result.object_to_camera, rig, box, zeta, ray_samples,
                            sharpness)
        shapes.append((box, pi))
    draw_overlay(image, shapes).save(path)
