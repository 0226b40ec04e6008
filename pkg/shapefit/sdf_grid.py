#!/usr/bin/env python3
"""
SDF grid module - dense signed-distance voxel field.

Voxel (i, j, k) sits at origin + (i, j, k) * voxel_size. Sampling is trilinear
between voxel centres; the interpolable interior is the box spanned by the
outermost centres. Queries outside it are clamped and flagged.
"""
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import GridFormatError

GRID_MAGIC = b"SDFG"
GRID_VERSION = 1
SURFACE_TOLERANCE = 1e-12
MAX_REFINE_ITERATIONS = 40
DEFAULT_COS_MIN = 0.05
DEFAULT_STEP_FACTOR = 0.5
RAY_CHUNK = 4096

# corner offsets in (dx, dy, dz) order used by all trilinear code
_CORNERS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])


@dataclass(frozen=True, eq=False)
class SdfGrid:
    dims: Tuple[int, int, int]
    origin: np.ndarray
    voxel_size: float
    values: np.ndarray  # indexed [i, j, k]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 2:
            raise ValueError(f"grid needs at least 2 voxels per axis, got {dims}")
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values.reshape(dims, order="F")
        if values.shape != dims:
            raise ValueError(f"values of shape {values.shape} do not match dims {dims}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        values.setflags(write=False)
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def upper(self) -> np.ndarray:
        """Position of the last voxel centre."""
        return self.origin + (np.array(self.dims) - 1) * self.voxel_size

    def voxel_center(self, i: int, j: int, k: int) -> np.ndarray:
        return self.origin + np.array([i, j, k], dtype=np.float64) * self.voxel_size

    def flat_values(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.values.reshape(-1, order="F")

    def same_layout(self, other: "SdfGrid") -> bool:
        return (self.dims == other.dims
                and np.array_equal(self.origin, other.origin)
                and self.voxel_size == other.voxel_size)

    def with_values(self, values: np.ndarray) -> "SdfGrid":
        return SdfGrid(self.dims, self.origin, self.voxel_size, values)


@dataclass(frozen=True, eq=False)
class RayHit:
    depth: float  # along the unit ray from its origin
    point_object: np.ndarray
    normal_cos: float
    gradient: np.ndarray


@dataclass
class RayBatch:
    """Vectorised raycast result; entries where hit is False are undefined."""
    hit: np.ndarray
    depth: np.ndarray
    points: np.ndarray
    normal_cos: np.ndarray
    gradient: np.ndarray


def _cell_coordinates(dims, origin, voxel_size, points):
    """Lower cell corner, fractional offset and out-of-bounds flag per point."""
    u = (points - origin) / voxel_size
    # voxel centres must reproduce stored values exactly despite rounding in u
    nearest = np.rint(u)
    u = np.where(np.abs(u - nearest) < 1e-10, nearest, u)
    upper = np.array(dims) - 1
    oob = np.any((u < 0) | (u > upper), axis=1)
    u = np.clip(u, 0, upper)
    base = np.minimum(np.floor(u).astype(np.int64), upper - 1)
    return base, u - base, oob


def cell_index(g: SdfGrid, points: np.ndarray) -> np.ndarray:
    """(N, 3) lower corner of the interpolation cell used for each point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _cell_coordinates(g.dims, g.origin, g.voxel_size, points)[0]


def trilinear(channels: np.ndarray, origin: np.ndarray, voxel_size: float,
              points: np.ndarray, with_gradient: bool = True):
    """Interpolate a (C, nx, ny, nz) stack at (N, 3) points.

    Returns values (C, N), gradients (C, N, 3) or None, and the out-of-bounds
    flag (N,). Out-of-bounds points are clamped onto the interior box and get
    the gradient of the clamped cell.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    base, f, oob = _cell_coordinates(channels.shape[1:], origin, voxel_size, points)

    values = np.zeros((channels.shape[0], points.shape[0]))
    grads = np.zeros((channels.shape[0], points.shape[0], 3)) if with_gradient else None
    for dx, dy, dz in _CORNERS:
        corner = channels[:, base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz]
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        wy = f[:, 1] if dy else 1.0 - f[:, 1]
        wz = f[:, 2] if dz else 1.0 - f[:, 2]
        values += corner * (wx * wy * wz)
        if with_gradient:
            sx = 1.0 if dx else -1.0
            sy = 1.0 if dy else -1.0
            sz = 1.0 if dz else -1.0
            grads[:, :, 0] += corner * (sx * wy * wz)
            grads[:, :, 1] += corner * (wx * sy * wz)
            grads[:, :, 2] += corner * (wx * wy * sz)
    if with_gradient:
        grads /= voxel_size
    return values, grads, oob


def sample_many(g: SdfGrid, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values, _, oob = trilinear(g.values[None], g.origin, g.voxel_size, points, with_gradient=False)
    return values[0], oob


def sample(g: SdfGrid, X) -> Tuple[float, bool]:
    """Trilinear SDF value at X and whether X had to be clamped."""
    values, oob = sample_many(g, np.asarray(X, dtype=np.float64).reshape(1, 3))
    return float(values[0]), bool(oob[0])


def gradient_many(g: SdfGrid, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    _, grads, oob = trilinear(g.values[None], g.origin, g.voxel_size, points)
    return grads[0], oob


def gradient(g: SdfGrid, X) -> Tuple[np.ndarray, bool]:
    """Analytic gradient of the trilinear interpolant at X."""
    grads, oob = gradient_many(g, np.asarray(X, dtype=np.float64).reshape(1, 3))
    return grads[0], bool(oob[0])


def clip_rays(lower: np.ndarray, upper: np.ndarray, origins: np.ndarray,
              dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test of rays against an axis-aligned box.

    Returns entry/exit ray parameters (entry clamped at 0) and an intersect flag.
    """
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lower - origins) / dirs
        t1 = (upper - origins) / dirs
    zero = dirs == 0
    inside = (origins >= lower) & (origins <= upper)
    t_lo = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    t_hi = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    t_near = np.maximum(t_lo.max(axis=1), 0.0)
    t_far = t_hi.min(axis=1)
    return t_near, t_far, t_far > t_near


def _refine_crossings(phi, origins, dirs, a, b, fa, fb):
    """Illinois-modified secant on brackets with fa > 0 >= fb."""
    c = b.copy()
    fc = fb.copy()
    side = np.zeros(a.shape, dtype=np.int8)
    active = fb != 0
    for _ in range(MAX_REFINE_ITERATIONS):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        ca = b[idx] - fb[idx] * (b[idx] - a[idx]) / (fb[idx] - fa[idx])
        fca = phi(origins[idx] + ca[:, None] * dirs[idx])
        c[idx], fc[idx] = ca, fca
        positive = fca > 0
        # root lies in [c, b]
        ia = idx[positive]
        a[ia], fa[ia] = ca[positive], fca[positive]
        fb[ia] = np.where(side[ia] == 1, 0.5 * fb[ia], fb[ia])
        side[ia] = 1
        # root lies in [a, c]
        ib = idx[~positive]
        b[ib], fb[ib] = ca[~positive], fca[~positive]
        fa[ib] = np.where(side[ib] == -1, 0.5 * fa[ib], fa[ib])
        side[ib] = -1
        done = (np.abs(fca) < SURFACE_TOLERANCE) | (np.abs(b[idx] - a[idx]) < 1e-13)
        active[idx[done]] = False
    return c


def raycast_many(g: SdfGrid, origins: np.ndarray, dirs: np.ndarray,
                 cos_min: float = DEFAULT_COS_MIN,
                 step_factor: float = DEFAULT_STEP_FACTOR) -> RayBatch:
    """First outside-to-inside zero crossing along each ray.

    origins may be a single (3,) point shared by all rays or (N, 3).
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    origins = np.array(np.broadcast_to(np.asarray(origins, dtype=np.float64), (n, 3)))
    out = RayBatch(hit=np.zeros(n, dtype=bool), depth=np.full(n, np.inf),
                   points=np.zeros((n, 3)), normal_cos=np.zeros(n),
                   gradient=np.zeros((n, 3)))
    t_near, t_far, intersects = clip_rays(g.origin, g.upper, origins, dirs)
    step = step_factor * g.voxel_size

    def phi(points):
        return sample_many(g, points)[0]

    candidates = np.nonzero(intersects)[0]
    for start in range(0, candidates.size, RAY_CHUNK):
        idx = candidates[start:start + RAY_CHUNK]
        o, d = origins[idx], dirs[idx]
        tn, tf = t_near[idx], t_far[idx]
        n_steps = int(np.ceil(np.max(tf - tn) / step)) + 1
        t = np.minimum(tn[:, None] + step * np.arange(n_steps + 1)[None, :], tf[:, None])
        pts = o[:, None, :] + t[..., None] * d[:, None, :]
        values = phi(pts.reshape(-1, 3)).reshape(t.shape)
        crossing = (values[:, :-1] > 0) & (values[:, 1:] <= 0)
        has = crossing.any(axis=1)
        if not has.any():
            continue
        rows = np.nonzero(has)[0]
        j = np.argmax(crossing[rows], axis=1)
        a, b = t[rows, j].copy(), t[rows, j + 1].copy()
        fa, fb = values[rows, j].copy(), values[rows, j + 1].copy()
        depth = _refine_crossings(phi, o[rows], d[rows], a, b, fa, fb)
        points = o[rows] + depth[:, None] * d[rows]
        grads, _ = gradient_many(g, points)
        norms = np.linalg.norm(grads, axis=1)
        cosines = np.abs(np.einsum("ij,ij->i", grads, d[rows])) / np.where(norms > 0, norms, 1.0)
        hit_idx = idx[rows]
        out.hit[hit_idx] = True
        out.depth[hit_idx] = depth
        out.points[hit_idx] = points
        out.normal_cos[hit_idx] = np.clip(cosines, cos_min, 1.0)
        out.gradient[hit_idx] = grads
    return out


def raycast(g: SdfGrid, origin, direction, cos_min: float = DEFAULT_COS_MIN,
            step_factor: float = DEFAULT_STEP_FACTOR) -> Optional[RayHit]:
    """Cast one unit ray; returns None on a miss."""
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be a unit vector")
    batch = raycast_many(g, np.asarray(origin, dtype=np.float64).reshape(3), direction[None],
                         cos_min=cos_min, step_factor=step_factor)
    if not batch.hit[0]:
        return None
    return RayHit(depth=float(batch.depth[0]), point_object=batch.points[0],
                  normal_cos=float(batch.normal_cos[0]), gradient=batch.gradient[0])


# === File formats ===

_HEADER = struct.Struct("<4sI3I3dd")


def grid_to_bytes(g: SdfGrid) -> bytes:
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, *g.dims, *g.origin, g.voxel_size)
    return header + g.flat_values().astype("<f4").tobytes()


def grid_from_bytes(data: bytes, source: str = "<bytes>") -> SdfGrid:
    if len(data) < _HEADER.size:
        raise GridFormatError(f"{source}: truncated header")
    magic, version, nx, ny, nz, ox, oy, oz, voxel = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{source}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise GridFormatError(f"{source}: unsupported version {version}")
    count = nx * ny * nz
    payload = data[_HEADER.size:]
    if len(payload) != 4 * count:
        raise GridFormatError(f"{source}: expected {count} values, found {len(payload) // 4}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return SdfGrid((nx, ny, nz), (ox, oy, oz), voxel, values)


def save_grid(g: SdfGrid, path: Union[str, Path]) -> None:
    Path(path).write_bytes(grid_to_bytes(g))


def load_grid(path: Union[str, Path]) -> SdfGrid:
    """Load a binary grid, or the JSON text form for files ending in .json."""
    path = Path(path)
    if path.suffix == ".json":
        return load_grid_text(path)
    return grid_from_bytes(path.read_bytes(), str(path))


def load_grid_text(path: Union[str, Path]) -> SdfGrid:
    """Text fixture form: {"dims": [...], "origin": [...], "voxel_size": v, "values": [...]}."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        return SdfGrid(tuple(data["dims"]), data["origin"], data["voxel_size"],
                       np.asarray(data["values"], dtype=np.float64))
    except (KeyError, ValueError, TypeError) as e:
        raise GridFormatError(f"{path}: {e}") from e


def save_grid_text(g: SdfGrid, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps({
        "dims": list(g.dims),
        "origin": g.origin.tolist(),
        "voxel_size": g.voxel_size,
        "values": g.flat_values().tolist(),
    }, indent=2))
