#!/usr/bin/env python3
"""
Shape model module - linear PCA subspace over SDF grids.

A shape code z decodes to Phi(z) = sum_k v_k z_k + Phi_mean. Basis grids are
unit-norm (as flattened vectors) and the per-component variance lives in
`eigenvalues`, so sigma_i = sqrt(eigenvalues[i]).
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from . import logger
from .errors import GridFormatError, ShapeModelError
from .sdf_grid import SdfGrid, trilinear

MODEL_MAGIC = b"SDFM"
MODEL_VERSION = 1
DEGENERATE_VARIANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ShapeModel:
    mean: SdfGrid
    basis: Tuple[SdfGrid, ...]
    eigenvalues: np.ndarray

    def __post_init__(self):
        basis = tuple(self.basis)
        eigenvalues = np.array(self.eigenvalues, dtype=np.float64).reshape(-1)
        if len(basis) != eigenvalues.size:
            raise ShapeModelError(f"{len(basis)} basis grids but {eigenvalues.size} eigenvalues")
        for grid in basis:
            if not grid.same_layout(self.mean):
                raise ShapeModelError("basis grids must share dims, origin and voxel size with the mean")
        if np.any(eigenvalues <= 0):
            raise ShapeModelError("eigenvalues must be positive")
        if np.any(np.diff(eigenvalues) > 0):
            raise ShapeModelError("eigenvalues must be sorted in descending order")
        eigenvalues.setflags(write=False)
        channels = np.stack([self.mean.values] + [g.values for g in basis])
        channels.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", eigenvalues)
        object.__setattr__(self, "_channels", channels)

    @property
    def K(self) -> int:
        return len(self.basis)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    @property
    def channels(self) -> np.ndarray:
        """(K + 1, nx, ny, nz) stack: mean followed by the basis grids."""
        return self._channels

    def check_code(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.K:
            raise ShapeModelError(f"shape code has length {z.size}, model expects {self.K}")
        return z


@dataclass
class DecodedSamples:
    values: np.ndarray     # (N,)
    basis: np.ndarray      # (N, K) = [v_1(X), ..., v_K(X)]
    gradient: np.ndarray   # (N, 3) spatial gradient of Phi(z)
    oob: np.ndarray        # (N,)


def decode(m: ShapeModel, z) -> SdfGrid:
    z = m.check_code(z)
    if not np.any(z):
        return m.mean
    values = m.mean.values + np.tensordot(z, m.channels[1:], axes=1)
    return m.mean.with_values(values)


def decode_many(m: ShapeModel, z, points: np.ndarray, with_gradient: bool = True) -> DecodedSamples:
    """Evaluate Phi(z) at points without materialising the decoded grid."""
    z = m.check_code(z)
    values, grads, oob = trilinear(m.channels, m.mean.origin, m.mean.voxel_size,
                                   points, with_gradient=with_gradient)
    phi = values[0] + z @ values[1:]
    grad = None
    if with_gradient:
        grad = grads[0] + np.tensordot(z, grads[1:], axes=1)
    return DecodedSamples(values=phi, basis=values[1:].T, gradient=grad, oob=oob)


def decode_at(m: ShapeModel, z, X) -> Tuple[float, np.ndarray]:
    """Phi(z) at one point plus the K basis values there."""
    samples = decode_many(m, z, np.asarray(X, dtype=np.float64).reshape(1, 3), with_gradient=False)
    return float(samples.values[0]), samples.basis[0]


def encode(m: ShapeModel, grid: SdfGrid) -> np.ndarray:
    """Least-squares shape code of a grid (orthonormal basis, so a projection)."""
    if not grid.same_layout(m.mean):
        raise ShapeModelError("grid layout does not match the model")
    centered = (grid.values - m.mean.values).reshape(-1)
    return m.channels[1:].reshape(m.K, -1) @ centered


def build_model(exemplars: Sequence[SdfGrid], K: int) -> ShapeModel:
    """Snapshot PCA: eigen-decompose the N x N Gram matrix of centred exemplars."""
    exemplars = list(exemplars)
    if K < 1:
        raise ShapeModelError(f"K must be at least 1, got {K}")
    if len(exemplars) < K + 1:
        raise ShapeModelError(
            f"too few exemplars: {len(exemplars)} given, at least {K + 1} needed for K={K}"
        )
    reference = exemplars[0]
    for i, grid in enumerate(exemplars[1:], start=1):
        if not grid.same_layout(reference):
            raise ShapeModelError(f"exemplar {i} has inconsistent dims, origin or voxel size")

    data = np.stack([g.values.reshape(-1) for g in exemplars])
    mean = data.mean(axis=0)
    centered = data - mean
    gram = centered @ centered.T
    eigvals, eigvecs = linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    variances = eigvals / (len(exemplars) - 1)

    scale = max(float(np.mean(data ** 2)), 1.0)
    if variances[0] <= DEGENERATE_VARIANCE * scale:
        raise ShapeModelError("degenerate dataset: exemplars show no variation")
    if variances[K - 1] <= DEGENERATE_VARIANCE * variances[0]:
        raise ShapeModelError(
            f"degenerate dataset: only {int(np.sum(variances > DEGENERATE_VARIANCE * variances[0]))} "
            f"significant components, K={K} requested"
        )

    basis = []
    for k in range(K):
        vector = centered.T @ eigvecs[:, k]
        vector /= np.linalg.norm(vector)
        basis.append(reference.with_values(vector.reshape(reference.dims)))
    logger.info(f"built shape model: {len(exemplars)} exemplars, K={K}, "
                f"sigmas={np.sqrt(variances[:K]).round(4).tolist()}")
    return ShapeModel(mean=reference.with_values(mean.reshape(reference.dims)),
                      basis=tuple(basis), eigenvalues=variances[:K])


# === File format ===

_HEADER = struct.Struct("<4sII3I3dd")


def save_model(m: ShapeModel, path: Union[str, Path]) -> None:
    g = m.mean
    parts: List[bytes] = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, m.K, *g.dims, *g.origin, g.voxel_size)]
    for grid in (m.mean,) + m.basis:
        parts.append(grid.flat_values().astype("<f4").tobytes())
    parts.append(m.eigenvalues.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: Union[str, Path]) -> ShapeModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, version, K, nx, ny, nz, ox, oy, oz, voxel = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    count = nx * ny * nz
    expected = _HEADER.size + 4 * count * (K + 1) + 8 * K
    if len(data) != expected:
        raise GridFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset = _HEADER.size
    grids = []
    for _ in range(K + 1):
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64)
        grids.append(SdfGrid((nx, ny, nz), (ox, oy, oz), voxel, values))
        offset += 4 * count
    eigenvalues = np.frombuffer(data, dtype="<f8", count=K, offset=offset)
    return ShapeModel(mean=grids[0], basis=tuple(grids[1:]), eigenvalues=eigenvalues)
