#!/usr/bin/env python3
"""
Bundle I/O - calibration, ground plane, detections, frame bundles and results.

Calibration follows the KITTI object-benchmark layout: lines "P2: ..." and
"P3: ..." with 12 numbers each (3x4 row-major projection matrices of the
rectified left and right cameras). Detections, bundles and results are JSON
documents backed by the pydantic records in config_models; paths inside them
are relative to the file that names them.
"""
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from . import logger
from .config_models import (
    DetectionRecord,
    FrameBundleRecord,
    FrameResultsRecord,
    GroundTruthRecord,
    MetricsRecord,
    ResultRecord,
)
from .errors import BundleParseError, GridFormatError
from .geometry import CameraIntrinsics, Pose, StereoRig
from .images import StereoFrame, load_gray, load_mask
from .metrics import ShapeMetrics
from .priors import GroundPlane, default_plane
from .sampling import Detection
from .shape_model import ShapeModel, load_model
from .solver import FitResult

PathLike = Union[str, Path]

CALIB_KEYS = ("P2", "P3")
DEPTH_MAGIC = b"SDFD"
DEPTH_VERSION = 1
_DEPTH_HEADER = struct.Struct("<4sIII")


# === Calibration ===

def _projection_lines(text: str, source: str) -> Dict[str, Tuple[np.ndarray, int]]:
    """Projection matrices by key, with the line each was read from."""
    found: Dict[str, Tuple[np.ndarray, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in CALIB_KEYS:
            continue
        fields = rest.split()
        if len(fields) != 12:
            raise BundleParseError(source, f"{key} needs 12 numbers, found {len(fields)}", number)
        try:
            found[key] = (np.array([float(v) for v in fields]).reshape(3, 4), number)
        except ValueError as e:
            raise BundleParseError(source, f"{key}: {e}", number) from e
    return found


def parse_calibration(text: str, source: str = "<calibration>") -> StereoRig:
    """Rectified rig from P2/P3: f and c from P2, baseline (P2[0,3] - P3[0,3]) / f."""
    mats = _projection_lines(text, source)
    for key in CALIB_KEYS:
        if key not in mats:
            raise BundleParseError(source, f"missing {key} projection line")
    (p2, p2_line), (p3, p3_line) = mats["P2"], mats["P3"]
    f = p2[0, 0]
    if not (f > 0 and p2[1, 1] > 0):
        raise BundleParseError(source, f"focal length must be positive, got {f}", p2_line)
    baseline = (p2[0, 3] - p3[0, 3]) / f
    if baseline == 0:
        raise BundleParseError(source, "zero stereo baseline", p3_line)
    if not np.allclose(p2[:, :3], p3[:, :3], rtol=1e-6, atol=1e-6):
        logger.warning(f"{source}: P2 and P3 intrinsics differ; using P2 for both cameras")
    intrinsics = CameraIntrinsics(f_u=f, f_v=p2[1, 1], c_u=p2[0, 2], c_v=p2[1, 2])
    return StereoRig.rectified(intrinsics, float(baseline))


def load_calibration(path: PathLike) -> StereoRig:
    path = Path(path)
    return parse_calibration(_read_text(path), str(path))


def format_calibration(rig: StereoRig) -> str:
    k = rig.intrinsics_left
    p2 = np.zeros((3, 4))
    p2[:, :3] = k.matrix()
    p3 = p2.copy()
    p3[0, 3] = -k.f_u * rig.baseline
    return "".join(f"{name}: {' '.join(f'{v:.12e}' for v in p.reshape(-1))}\n"
                   for name, p in (("P2", p2), ("P3", p3)))


def write_calibration(rig: StereoRig, path: PathLike) -> None:
    Path(path).write_text(format_calibration(rig))


# === Ground plane ===

def parse_plane(text: str, source: str = "<plane>", frame: int = 0) -> GroundPlane:
    """One "nx ny nz d" line per frame; returns the frame-th one."""
    rows = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise BundleParseError(source, f"plane needs 4 numbers, found {len(fields)}", number)
        try:
            rows.append((number, [float(v) for v in fields]))
        except ValueError as e:
            raise BundleParseError(source, str(e), number) from e
    if frame >= len(rows):
        raise BundleParseError(source, f"no plane for frame {frame}")
    number, coefficients = rows[frame]
    try:
        return GroundPlane.from_coefficients(coefficients)
    except ValueError as e:
        raise BundleParseError(source, str(e), number) from e


def load_plane(path: PathLike, frame: int = 0) -> GroundPlane:
    path = Path(path)
    return parse_plane(_read_text(path), str(path), frame)


def write_plane(plane: GroundPlane, path: PathLike) -> None:
    Path(path).write_text(" ".join(f"{v:.12g}" for v in plane.coefficients()) + "\n")


# === Detections ===

def read_detection_records(path: PathLike) -> List[DetectionRecord]:
    path = Path(path)
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise BundleParseError(path, e.msg, e.lineno) from e
    if not isinstance(data, list):
        raise BundleParseError(path, "expected a list of detections")
    records = []
    for index, item in enumerate(data):
        try:
            records.append(DetectionRecord.model_validate(item))
        except ValidationError as e:
            raise BundleParseError(path, f"detection #{index}: {e}") from e
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise BundleParseError(path, f"duplicate detection ids in {ids}")
    return records


def write_detection_records(records: Sequence[DetectionRecord], path: PathLike) -> None:
    payload = [json.loads(r.model_dump_json(exclude_none=True)) for r in records]
    Path(path).write_text(json.dumps(payload, indent=2))


def _load_mask_file(path: Path, shape, owner: Path) -> np.ndarray:
    if not path.is_file():
        raise BundleParseError(owner, f"mask file not found: {path}")
    mask = load_mask(path)
    if shape is not None and mask.shape != tuple(shape):
        raise BundleParseError(owner, f"mask {path} is {mask.shape}, images are {tuple(shape)}")
    return mask


def detection_from_record(record: DetectionRecord, base_dir: Path, shape=None,
                          owner: Optional[Path] = None) -> Detection:
    owner = owner or base_dir
    return Detection(
        id=record.id,
        bbox=tuple(record.bbox),
        bbox_right=tuple(record.bbox_right) if record.bbox_right is not None else None,
        mask_left=_load_mask_file(base_dir / record.mask_left, shape, owner),
        mask_right=_load_mask_file(base_dir / record.mask_right, shape, owner),
        init_pose=_pose_from_rows(record.init_pose, owner),
    )


def load_detections(path: PathLike, shape=None) -> List[Detection]:
    """Detections with their masks loaded (mask paths relative to the file)."""
    path = Path(path)
    return [detection_from_record(r, path.parent, shape, path) for r in read_detection_records(path)]


# === Frame bundles ===

@dataclass
class LoadedBundle:
    """Everything a refine run needs, resolved from a bundle file."""
    path: Path
    record: FrameBundleRecord
    frame: StereoFrame
    detections: List[Detection]
    model: ShapeModel
    plane: GroundPlane
    ground_truth_clouds: Dict[int, np.ndarray] = field(default_factory=dict)


def read_bundle_record(path: PathLike) -> FrameBundleRecord:
    path = Path(path)
    try:
        return FrameBundleRecord.model_validate_json(_read_text(path))
    except ValidationError as e:
        raise BundleParseError(path, str(e)) from e


def write_bundle_record(record: FrameBundleRecord, path: PathLike) -> None:
    Path(path).write_text(record.model_dump_json(indent=2, exclude_none=True))


def load_frame(left: PathLike, right: PathLike, calibration: PathLike) -> StereoFrame:
    rig = load_calibration(calibration)
    images = []
    for p in (Path(left), Path(right)):
        if not p.is_file():
            raise BundleParseError(p, "image file not found")
        images.append(load_gray(p))
    if images[0].shape != images[1].shape:
        raise BundleParseError(right, f"right image is {images[1].shape}, left is {images[0].shape}")
    return StereoFrame(images[0], images[1], rig)


def load_bundle(path: PathLike) -> LoadedBundle:
    path = Path(path)
    record = read_bundle_record(path)
    base = path.parent
    frame = load_frame(base / record.left, base / record.right, base / record.calibration)
    detections = load_detections(base / record.detections, frame.shape)
    model_path = base / record.model
    if not model_path.is_file():
        raise BundleParseError(path, f"model file not found: {model_path}")
    try:
        model = load_model(model_path)
    except GridFormatError as e:
        raise BundleParseError(model_path, str(e)) from e
    plane = load_plane(base / record.plane) if record.plane else default_plane()
    clouds = {}
    for instance_id, gt in record.ground_truth.items():
        if gt.cloud:
            clouds[int(instance_id)] = load_cloud(base / gt.cloud)
    logger.info(f"loaded bundle {path}: {len(detections)} detections, image {frame.shape}, K={model.K}")
    return LoadedBundle(path=path, record=record, frame=frame, detections=detections, model=model,
                        plane=plane, ground_truth_clouds=clouds)


# === Results ===

def pose_rows(pose: Pose) -> List[List[float]]:
    return pose.matrix().tolist()


def result_record(result: FitResult, metrics: Optional[ShapeMetrics] = None) -> ResultRecord:
    return ResultRecord(
        id=result.instance_id,
        status=result.status,
        pose=pose_rows(result.object_to_camera),
        shape_code=[float(v) for v in result.z],
        energies=result.energies,
        iterations=result.iterations,
        message=result.message,
        energy_history=[float(e) for e in result.energy_history],
        metrics=MetricsRecord(**asdict(metrics)) if metrics is not None else None,
    )


def write_results(results: FrameResultsRecord, path: PathLike) -> None:
    Path(path).write_text(results.model_dump_json(indent=2))


def read_results(path: PathLike) -> FrameResultsRecord:
    path = Path(path)
    try:
        return FrameResultsRecord.model_validate_json(_read_text(path))
    except ValidationError as e:
        raise BundleParseError(path, str(e)) from e


def ground_truth_record(pose: Pose, shape_code, cloud: Optional[str] = None) -> GroundTruthRecord:
    return GroundTruthRecord(pose=pose_rows(pose), shape_code=[float(v) for v in shape_code], cloud=cloud)


# === Point clouds and depth maps ===

def save_cloud(points: np.ndarray, path: PathLike) -> None:
    """ASCII xyz, one point per line."""
    np.savetxt(path, np.asarray(points, dtype=np.float64).reshape(-1, 3), fmt="%.6f")


def load_cloud(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise BundleParseError(path, "point cloud file not found")
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise BundleParseError(path, str(e)) from e
    if data.size == 0:
        return np.zeros((0, 3))
    if data.shape[1] != 3:
        raise BundleParseError(path, f"expected 3 columns, found {data.shape[1]}")
    return data


def save_depth(depth: np.ndarray, path: PathLike) -> None:
    """Binary depth map: magic, version, width, height, then row-major float32 (inf = no hit)."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    Path(path).write_bytes(_DEPTH_HEADER.pack(DEPTH_MAGIC, DEPTH_VERSION, w, h)
                           + depth.astype("<f4").tobytes())


def load_depth(path: PathLike) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _DEPTH_HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, version, w, h = _DEPTH_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != DEPTH_VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    payload = data[_DEPTH_HEADER.size:]
    if len(payload) != 4 * w * h:
        raise GridFormatError(f"{path}: expected {w * h} depths, found {len(payload) // 4}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w)


# === Helpers ===

def _read_text(path: Path) -> str:
    if not path.is_file():
        raise BundleParseError(path, "file not found")
    return path.read_text()


def _pose_from_rows(rows, source) -> Pose:
    pose = Pose.from_matrix(rows)
    if not pose.is_valid(1e-6):
        raise BundleParseError(source, "init_pose rotation is not orthonormal")
    return pose
