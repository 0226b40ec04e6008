#!/usr/bin/env python3
"""
Sampling module - occlusion masks between instances and adaptive pixel selection.

Selection runs in two rounds inside an instance's bounding box. Round one takes
the strongest pixels whose gradient magnitude exceeds their coarse cell's
median by an offset; round two fills every fine cell that round one left empty
with its single strongest pixel. Ties break by row-major pixel order.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import logger
from .config_models import SamplingConfig
from .geometry import Pose
from .images import GrayImage

BBox = Tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class Detection:
    id: int
    bbox: BBox                     # u_min, v_min, u_max, v_max with max exclusive
    mask_left: np.ndarray          # foreground probability per pixel
    mask_right: np.ndarray
    init_pose: Pose                # object-to-camera
    bbox_right: Optional[BBox] = None

    def __post_init__(self):
        if self.mask_left.shape != self.mask_right.shape:
            raise ValueError(f"detection {self.id}: left and right masks differ in size")
        object.__setattr__(self, "bbox", clip_bbox(self.bbox, self.mask_left.shape))
        if self.bbox_right is not None:
            object.__setattr__(self, "bbox_right", clip_bbox(self.bbox_right, self.mask_right.shape))

    @property
    def area(self) -> int:
        return bbox_area(self.bbox)

    def mask(self, side: str) -> np.ndarray:
        if side == "left":
            return self.mask_left
        if side == "right":
            return self.mask_right
        raise ValueError(f"unknown camera side {side!r}")

    def bbox_for(self, side: str, threshold: float = 0.5, padding: int = 4) -> BBox:
        """Left bbox, or the right one (explicit, else the padded extent of the right mask)."""
        if side == "left":
            return self.bbox
        if self.bbox_right is not None:
            return self.bbox_right
        rows, cols = np.nonzero(self.mask_right > threshold)
        if rows.size == 0:
            return self.bbox
        box = (cols.min() - padding, rows.min() - padding, cols.max() + 1 + padding, rows.max() + 1 + padding)
        return clip_bbox(box, self.mask_right.shape)


@dataclass
class PixelSet:
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))  # (M, 2) as (u, v)
    rounds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    target: int = 0

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def empty(self) -> bool:
        return len(self) == 0


def clip_bbox(bbox: Sequence[int], shape: Tuple[int, int]) -> BBox:
    h, w = shape
    u0, v0, u1, v1 = (int(round(x)) for x in bbox)
    return (max(0, min(u0, w)), max(0, min(v0, h)), max(0, min(u1, w)), max(0, min(v1, h)))


def bbox_area(bbox: BBox) -> int:
    return max(0, bbox[2] - bbox[0]) * max(0, bbox[3] - bbox[1])


def depth_order(detections: Sequence[Detection], side: str = "left") -> List[Detection]:
    """Closest first: larger bbox bottom, then larger bbox area."""
    def key(det: Detection):
        box = det.bbox_for(side)
        return (-box[3], -bbox_area(box), det.id)
    return sorted(detections, key=key)


def occlusion_mask(detections: Sequence[Detection], target: int, side: str = "left",
                   threshold: float = 0.5) -> np.ndarray:
    """Pixels of the target's bbox covered by the masks of closer instances."""
    if not detections:
        raise ValueError("occlusion_mask needs at least one detection")
    ordered = depth_order(detections, side)
    position = next((i for i, d in enumerate(ordered) if d.id == target), None)
    if position is None:
        raise KeyError(f"no detection with id {target}")
    det = ordered[position]
    mask = np.zeros(det.mask(side).shape, dtype=bool)
    for closer in ordered[:position]:
        mask |= closer.mask(side) > threshold
    u0, v0, u1, v1 = det.bbox_for(side)
    inside = np.zeros_like(mask)
    inside[v0:v1, u0:u1] = True
    return mask & inside


def _cell_labels(h: int, w: int, cell: int) -> np.ndarray:
    """Row-major cell index of every pixel of an h x w region."""
    rows = np.arange(h) // cell
    cols = np.arange(w) // cell
    n_cols = -(-w // cell)
    return rows[:, None] * n_cols + cols[None, :]


def _coarse_excess(grad: np.ndarray, valid: np.ndarray, cell: int) -> np.ndarray:
    labels = _cell_labels(*grad.shape, cell)
    excess = np.full(grad.shape, -np.inf)
    for label in np.unique(labels[valid]):
        in_cell = (labels == label) & valid
        excess[in_cell] = grad[in_cell] - np.median(grad[in_cell])
    return excess


def _round_one(excess: np.ndarray, valid: np.ndarray, offset: float, cap: int) -> Tuple[np.ndarray, int]:
    """Flat indices of the top candidates and how many qualified before the cap."""
    flat = excess.reshape(-1)
    candidates = np.nonzero((flat > offset) & valid.reshape(-1))[0]
    # lexsort: last key primary; stable row-major ties
    order = np.lexsort((candidates, -flat[candidates]))
    return candidates[order][:max(cap, 0)], candidates.size


def _round_two(grad: np.ndarray, valid: np.ndarray, taken: np.ndarray, cell: int) -> np.ndarray:
    labels = _cell_labels(*grad.shape, cell).reshape(-1)
    flat_grad = grad.reshape(-1)
    flat_valid = valid.reshape(-1)
    covered = np.zeros(labels.max() + 1, dtype=bool)
    covered[labels[taken]] = True
    members = np.nonzero(flat_valid & ~covered[labels])[0]
    if members.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((members, -flat_grad[members], labels[members]))
    ranked = members[order]
    _, first = np.unique(labels[ranked], return_index=True)
    return ranked[first].astype(np.int64)


def target_count(bbox: BBox, density: float = 0.05) -> int:
    return int(round(density * bbox_area(bbox)))


def adaptive_sample(image: GrayImage, bbox: BBox, occluded: Optional[np.ndarray] = None,
                    config: Optional[SamplingConfig] = None) -> PixelSet:
    """Two-round gradient-based pixel selection inside bbox, avoiding occluded pixels."""
    config = config or SamplingConfig()
    u0, v0, u1, v1 = clip_bbox(bbox, image.shape)
    if u1 <= u0 or v1 <= v0:
        raise ValueError(f"bbox {bbox} has no area inside the image")
    grad = image.gradient_magnitude()[v0:v1, u0:u1]
    valid = np.ones(grad.shape, dtype=bool)
    if occluded is not None:
        valid &= ~occluded[v0:v1, u0:u1]
    target = target_count((u0, v0, u1, v1), config.density)
    if not valid.any():
        return PixelSet(target=target)

    excess = _coarse_excess(grad, valid, config.coarse_cell)
    offset = config.gradient_offset
    cap = target
    low, high = int(np.floor(0.8 * target)), int(np.ceil(1.2 * target))
    for attempt in range(config.max_repasses + 1):
        first, qualified = _round_one(excess, valid, offset, cap)
        second = _round_two(grad, valid, first, config.fine_cell)
        total = first.size + second.size
        if low <= total <= high or attempt == config.max_repasses:
            break
        if total > high or qualified > first.size:
            cap = max(0, target - second.size)
        else:
            offset *= 0.5
    logger.debug(f"sampled {total} pixels in bbox {(u0, v0, u1, v1)} "
                 f"(target {target}, round one {first.size}, offset {offset:.4g})")

    chosen = np.concatenate([first, second])
    rows, cols = np.divmod(chosen, grad.shape[1])
    pixels = np.stack([cols + u0, rows + v0], axis=1).astype(np.int64)
    rounds = np.concatenate([np.ones(first.size, np.int8), np.full(second.size, 2, np.int8)])
    return PixelSet(pixels=pixels, rounds=rounds, target=target)


def sample_detection(frame_images: Tuple[GrayImage, GrayImage], detections: Sequence[Detection],
                     det: Detection, config: Optional[SamplingConfig] = None):
    """Pixel sets for both views of one detection, each with its own occlusion mask."""
    config = config or SamplingConfig()
    out = {}
    for side, image in zip(("left", "right"), frame_images):
        occ = occlusion_mask(detections, det.id, side, config.occlusion_threshold)
        box = det.bbox_for(side, config.occlusion_threshold, config.right_bbox_padding)
        if bbox_area(box) == 0:
            out[side] = PixelSet()
            continue
        out[side] = adaptive_sample(image, box, occ, config)
    return out
