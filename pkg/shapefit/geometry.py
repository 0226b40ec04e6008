#!/usr/bin/env python3
"""
Geometry module - SE(3) poses, twist coordinates, generators and pinhole cameras.

Twist ordering is translation first, xi = (v0, v1, v2, w0, w1, w2). Every
Jacobian column in the package follows this order, followed by the K shape
columns. Pose increments are applied on the left: T <- exp(hat(delta)) * T.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import BehindCameraError, DegenerateInputError

TAYLOR_THRESHOLD = 1e-8
LOG_ANGLE_MARGIN = 1e-6

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def skew(w: ArrayLike) -> np.ndarray:
    """Return the 3x3 cross-product matrix of w."""
    w = np.asarray(w, dtype=np.float64)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid-body transform X' = R X + t."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = _frozen(self.rotation).reshape(3, 3)
        translation = _frozen(self.translation).reshape(3)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> "Pose":
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply other first, then self."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Transform (3,) or (N, 3) points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=np.float64)
        return vectors @ self.rotation.T

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.allclose(r @ r.T, np.eye(3), atol=tol, rtol=0.0)
                and abs(np.linalg.det(r) - 1.0) < tol)


@dataclass(frozen=True, eq=False)
class Twist:
    """Tangent-space coordinates: v (translation, meters), w (rotation, radians)."""
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(self.v).reshape(3))
        object.__setattr__(self, "w", _frozen(self.w).reshape(3))

    @classmethod
    def from_vector(cls, xi: ArrayLike) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        return cls(xi[:3], xi[3:])

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])


def _as_twist(xi: Union[Twist, ArrayLike]) -> Twist:
    return xi if isinstance(xi, Twist) else Twist.from_vector(xi)


def hat(xi: Union[Twist, ArrayLike]) -> np.ndarray:
    """4x4 matrix form of a twist."""
    xi = _as_twist(xi)
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi.w)
    m[:3, 3] = xi.v
    return m


def se3_exp(xi: Union[Twist, ArrayLike]) -> Pose:
    """Closed-form exponential map with a Taylor fallback near zero rotation."""
    xi = _as_twist(xi)
    w = xi.w
    theta = float(np.linalg.norm(w))
    W = skew(w)
    W2 = W @ W
    if theta < TAYLOR_THRESHOLD:
        R = np.eye(3) + W + 0.5 * W2
        V = np.eye(3) + 0.5 * W + W2 / 6.0
    else:
        half = 0.5 * theta
        a = np.sin(theta) / theta
        # half-angle form keeps (1 - cos)/theta^2 accurate for small angles
        b = 2.0 * np.sin(half) ** 2 / theta ** 2
        c = (theta - np.sin(theta)) / theta ** 3
        R = np.eye(3) + a * W + b * W2
        V = np.eye(3) + b * W + c * W2
    return Pose(R, V @ xi.v)


def se3_log(pose: Pose) -> Twist:
    """Inverse of se3_exp for rotation angles below pi - 1e-6."""
    R = pose.rotation
    axis_part = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(axis_part))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta > np.pi - LOG_ANGLE_MARGIN:
        raise DegenerateInputError(
            f"rotation angle {theta:.9f} rad is too close to pi for a unique logarithm"
        )
    if theta < TAYLOR_THRESHOLD:
        w = axis_part
        W = skew(w)
        V_inv = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    else:
        w = axis_part * (theta / s)
        W = skew(w)
        half = 0.5 * theta
        if theta < 1e-4:
            d = 1.0 / 12.0 + theta ** 2 / 720.0
        else:
            d = (1.0 - half / np.tan(half)) / theta ** 2
        V_inv = np.eye(3) - 0.5 * W + d * (W @ W)
    return Twist(V_inv @ pose.translation, w)


def se3_generators() -> List[np.ndarray]:
    """Infinitesimal generators G0..G5 (translation x, y, z, rotation x, y, z)."""
    gens = []
    for k in range(3):
        g = np.zeros((4, 4))
        g[k, 3] = 1.0
        gens.append(g)
    for k in range(3):
        g = np.zeros((4, 4))
        g[:3, :3] = skew(np.eye(3)[k])
        gens.append(g)
    return gens


def point_twist_jacobian(points: np.ndarray) -> np.ndarray:
    """d(exp(hat(delta)) X)/d(delta) at delta = 0 for (N, 3) points -> (N, 3, 6).

    Column k equals (G_k [X; 1])[0:3], i.e. [I | -[X]x].
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    jac = np.zeros((n, 3, 6))
    jac[:, 0, 0] = jac[:, 1, 1] = jac[:, 2, 2] = 1.0
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    jac[:, 1, 3], jac[:, 2, 3] = -z, y
    jac[:, 0, 4], jac[:, 2, 4] = z, -x
    jac[:, 0, 5], jac[:, 1, 5] = -y, x
    return jac


def scalar_field_twist_rows(points: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """grad . dX/d(delta) for (N, 3) points -> (N, 6): [grad, X x grad]."""
    points = np.atleast_2d(points)
    gradients = np.atleast_2d(gradients)
    return np.concatenate([gradients, np.cross(points, gradients)], axis=1)


@dataclass(frozen=True)
class CameraIntrinsics:
    f_u: float
    f_v: float
    c_u: float
    c_v: float

    def __post_init__(self):
        if not (self.f_u > 0 and self.f_v > 0):
            raise ValueError(f"focal lengths must be positive, got {self.f_u}, {self.f_v}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.f_u, 0.0, self.c_u],
                         [0.0, self.f_v, self.c_v],
                         [0.0, 0.0, 1.0]])

    def normalized(self, pixels: np.ndarray) -> np.ndarray:
        """K^-1 [u, v, 1]^T for (N, 2) pixels -> (N, 3)."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        out = np.ones((pixels.shape[0], 3))
        out[:, 0] = (pixels[:, 0] - self.c_u) / self.f_u
        out[:, 1] = (pixels[:, 1] - self.c_v) / self.f_v
        return out

    def ray_directions(self, pixels: np.ndarray) -> np.ndarray:
        """Unit viewing rays for (N, 2) pixels."""
        rays = self.normalized(pixels)
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def project_points(k: CameraIntrinsics, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) camera points; returns pixels and an in-front-of-camera flag."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = points[:, 2]
    valid = z > 0
    safe_z = np.where(valid, z, 1.0)
    uv = np.empty((points.shape[0], 2))
    uv[:, 0] = k.f_u * points[:, 0] / safe_z + k.c_u
    uv[:, 1] = k.f_v * points[:, 1] / safe_z + k.c_v
    return uv, valid


def project(k: CameraIntrinsics, X: ArrayLike) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    uv, valid = project_points(k, X.reshape(-1, 3))
    if not valid.all():
        raise BehindCameraError(f"point with depth {X.reshape(-1, 3)[~valid][0, 2]} is behind the camera")
    return uv.reshape(X.shape[:-1] + (2,))


def backproject(k: CameraIntrinsics, p: ArrayLike, d) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise BehindCameraError(f"depth must be positive, got {d}")
    rays = k.normalized(p.reshape(-1, 2)) * d.reshape(-1, 1)
    return rays.reshape(p.shape[:-1] + (3,))


@dataclass(frozen=True, eq=False)
class StereoRig:
    intrinsics_left: CameraIntrinsics
    intrinsics_right: CameraIntrinsics
    left_to_right: Pose

    @property
    def baseline(self) -> float:
        return float(-self.left_to_right.translation[0])

    @classmethod
    def rectified(cls, intrinsics: CameraIntrinsics, baseline: float) -> "StereoRig":
        return cls(intrinsics, intrinsics, Pose(np.eye(3), [-baseline, 0.0, 0.0]))

    def view(self, side: str) -> "CameraView":
        if side == "left":
            return CameraView(self.intrinsics_left, Pose.identity())
        if side == "right":
            return CameraView(self.intrinsics_right, self.left_to_right.inverse())
        raise ValueError(f"unknown camera side {side!r}")


@dataclass(frozen=True, eq=False)
class CameraView:
    """One camera of the rig: intrinsics and its camera-to-left-camera transform."""
    intrinsics: CameraIntrinsics
    to_left: Pose

    def rays_in_left(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Ray origin (3,) and unit directions (N, 3), both in the left camera frame."""
        dirs = self.intrinsics.ray_directions(pixels)
        return self.to_left.translation.copy(), self.to_left.rotate(dirs)
