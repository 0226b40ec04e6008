#!/usr/bin/env python3
"""
Priors - shape code magnitude, ground-plane translation and ground-normal rotation.

All Jacobians are rows over [delta xi (6); z (K)] for the left-multiplied
camera-to-object pose T_c^o <- exp(delta) T_c^o.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .geometry import Pose, se3_generators

DEFAULT_CAMERA_HEIGHT = 1.65


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """Plane n . X + d = 0 in left-camera coordinates."""
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.array(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got norm {np.linalg.norm(normal)}")
        if abs(normal[1]) < 1e-9:
            raise ValueError("plane normal has no y component (vertical plane)")
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_coefficients(cls, coefficients: Sequence[float]) -> "GroundPlane":
        """Build from (nx, ny, nz, d), rescaling so the normal has unit length."""
        a = np.asarray(coefficients, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(a[:3])
        if norm == 0:
            raise ValueError("plane normal is zero")
        return cls(a[:3] / norm, a[3] / norm)

    def coefficients(self) -> np.ndarray:
        return np.append(self.normal, self.offset)

    def height_at(self, x: float, z: float) -> float:
        """Camera-frame y of the plane point above/below (x, z)."""
        n = self.normal
        return -(n[0] * x + n[2] * z + self.offset) / n[1]


def default_plane(camera_height: float = DEFAULT_CAMERA_HEIGHT) -> GroundPlane:
    """Road camera_height below a level camera whose y axis points down."""
    return GroundPlane(np.array([0.0, -1.0, 0.0]), camera_height)


def shape_prior(z: np.ndarray, sigmas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """r_i = z_i / sigma_i and the K x (6 + K) Jacobian."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    k = z.size
    jac = np.zeros((k, 6 + k))
    jac[:, 6:] = np.diag(1.0 / sigmas)
    return z / sigmas, jac


def translation_prior(camera_to_object: Pose, plane: GroundPlane,
                      shape_dim: int) -> Tuple[float, np.ndarray]:
    """Signed offset of the object origin from the plane along camera y."""
    object_to_camera = camera_to_object.inverse()
    t = object_to_camera.translation
    n = plane.normal
    r = t[1] + (n[0] * t[0] + n[2] * t[2] + plane.offset) / n[1]
    T = object_to_camera.matrix()
    # d t_o^c / d delta_k = -(T_o^c G_k)[0:3, 3]
    dt = np.stack([-(T @ g)[:3, 3] for g in se3_generators()], axis=1)
    coeff = np.array([n[0] / n[1], 1.0, n[2] / n[1]])
    jac = np.zeros(6 + shape_dim)
    jac[:6] = coeff @ dt
    return float(r), jac


def rotation_prior(camera_to_object: Pose, plane: GroundPlane,
                   shape_dim: int) -> Tuple[float, np.ndarray]:
    """1 + <second row of R_c^o, n_g>; zero when the object's y axis points into the ground."""
    r = 1.0 + float(camera_to_object.rotation[1] @ plane.normal)
    T = camera_to_object.matrix()
    jac = np.zeros(6 + shape_dim)
    jac[:6] = [(g @ T)[1, :3] @ plane.normal for g in se3_generators()]
    return r, jac
