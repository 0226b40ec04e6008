#!/usr/bin/env python3
"""
Images module - grayscale images with bilinear access, masks and the stereo frame.

Pixel (u, v) addresses column u and row v; integer coordinates are pixel
centres. Intensities are normalised to [0, 1] at ingestion.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from .geometry import StereoRig


@dataclass(frozen=True, eq=False)
class GrayImage:
    intensities: np.ndarray  # (height, width)

    def __post_init__(self):
        data = np.array(self.intensities, dtype=np.float64, copy=True)
        if data.ndim != 2 or min(data.shape) < 2:
            raise ValueError(f"image must be 2D with at least 2x2 pixels, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image intensities must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "intensities", data)
        gv, gu = np.gradient(data)
        gu.setflags(write=False)
        gv.setflags(write=False)
        object.__setattr__(self, "_grad_u", gu)
        object.__setattr__(self, "_grad_v", gv)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.intensities.shape

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(uv)
        return ((uv[:, 0] >= 0) & (uv[:, 0] <= self.width - 1)
                & (uv[:, 1] >= 0) & (uv[:, 1] <= self.height - 1))

    def _cells(self, uv: np.ndarray):
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        valid = self.contains(uv)
        u = np.clip(uv[:, 0], 0, self.width - 1)
        v = np.clip(uv[:, 1], 0, self.height - 1)
        u0 = np.minimum(np.floor(u).astype(np.int64), self.width - 2)
        v0 = np.minimum(np.floor(v).astype(np.int64), self.height - 2)
        return u0, v0, u - u0, v - v0, valid

    @staticmethod
    def _blend(data, u0, v0, fu, fv):
        return ((1 - fu) * (1 - fv) * data[v0, u0] + fu * (1 - fv) * data[v0, u0 + 1]
                + (1 - fu) * fv * data[v0 + 1, u0] + fu * fv * data[v0 + 1, u0 + 1])

    def sample_many(self, uv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Bilinear intensities at (N, 2) subpixel positions plus an in-image flag."""
        u0, v0, fu, fv, valid = self._cells(uv)
        return self._blend(self.intensities, u0, v0, fu, fv), valid

    def sample(self, uv) -> float:
        return float(self.sample_many(np.asarray(uv, dtype=np.float64).reshape(1, 2))[0][0])

    def interpolant_gradient(self, uv: np.ndarray) -> np.ndarray:
        """Exact (dI/du, dI/dv) of the bilinear interpolant, shape (N, 2)."""
        u0, v0, fu, fv, _ = self._cells(uv)
        d = self.intensities
        i00, i10 = d[v0, u0], d[v0, u0 + 1]
        i01, i11 = d[v0 + 1, u0], d[v0 + 1, u0 + 1]
        du = (1 - fv) * (i10 - i00) + fv * (i11 - i01)
        dv = (1 - fu) * (i01 - i00) + fu * (i11 - i10)
        return np.stack([du, dv], axis=1)

    def central_gradient(self, uv: np.ndarray) -> np.ndarray:
        """Central-difference gradient, bilinearly interpolated at subpixel positions."""
        u0, v0, fu, fv, _ = self._cells(uv)
        return np.stack([self._blend(self._grad_u, u0, v0, fu, fv),
                         self._blend(self._grad_v, u0, v0, fu, fv)], axis=1)

    def gradient_magnitude(self) -> np.ndarray:
        return np.hypot(self._grad_u, self._grad_v)


@dataclass(frozen=True, eq=False)
class StereoFrame:
    """Rectified left/right pair with its rig."""
    left: GrayImage
    right: GrayImage
    rig: StereoRig

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} images differ in size")

    def image(self, side: str) -> GrayImage:
        if side == "left":
            return self.left
        if side == "right":
            return self.right
        raise ValueError(f"unknown camera side {side!r}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.left.shape


# === Pillow I/O ===

def _read_luminance(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode == "I;16" or im.mode == "I":
            data = np.asarray(im, dtype=np.float64)
            return data / (65535.0 if data.max() > 255 else 255.0)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def load_gray(path: Union[str, Path]) -> GrayImage:
    """Read any Pillow-supported image as grayscale in [0, 1]."""
    return GrayImage(_read_luminance(path))


def load_mask(path: Union[str, Path]) -> np.ndarray:
    """Foreground probability mask in [0, 1]; 255 maps to 1.0."""
    return _read_luminance(path)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def save_gray(image: Union[GrayImage, np.ndarray], path: Union[str, Path]) -> None:
    """Write intensities in [0, 1]; the format follows the suffix (.pgm, .png)."""
    data = image.intensities if isinstance(image, GrayImage) else np.asarray(image, dtype=np.float64)
    Image.fromarray(to_uint8(data)).save(path)


def save_mask(mask: np.ndarray, path: Union[str, Path]) -> None:
    save_gray(np.asarray(mask, dtype=np.float64), path)
