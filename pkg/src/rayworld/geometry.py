"""Pinhole cameras, the global coordinate convention, and per-token rays.

Conventions:
  * global frame: z-up, fixed at the ego position of the first timestep,
  * camera frame: x right, y down, z forward (optical axis),
  * extrinsics map camera coordinates to global coordinates,
  * token rays pass through grid-cell centers; at scale (h, w) the cell
    (i, j) center sits at pixel ((j + 0.5) * W / w, (i + 0.5) * H / h), so
    grids whose cell centers coincide across scales produce identical rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray      # (3,3) camera->global
    translation: np.ndarray   # (3,) camera center in global coords, meters
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise GeometryError("rotation must be orthonormal with determinant +1")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def translated(self, offset) -> "CameraPose":
        return CameraPose(self.rotation, self.translation + np.asarray(offset, dtype=np.float64),
                          self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def rotated_z(self, yaw: float) -> "CameraPose":
        rz = rot_z(yaw)
        return CameraPose(rz @ self.rotation, rz @ self.translation,
                          self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True)
class ExtendedRay:
    """7D token coordinate: moment, unit direction, and time in seconds."""
    m: np.ndarray
    d: np.ndarray
    t: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.m, self.d, [self.t]])


@dataclass(frozen=True)
class WorldFrame:
    """Reference rigid transform fixing the global origin (ego at t=0)."""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def to_local(self, pose: CameraPose) -> CameraPose:
        """Re-express a global-frame camera pose in this frame."""
        r = self.rotation.T @ pose.rotation
        t = self.rotation.T @ (pose.translation - self.translation)
        return CameraPose(r, t, pose.fx, pose.fy, pose.cx, pose.cy, pose.width, pose.height)


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pixel_ray_directions(pose: CameraPose, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Unit global-frame directions through pixel coordinates (us, vs)."""
    x = (us - pose.cx) / pose.fx
    y = (vs - pose.cy) / pose.fy
    dirs = np.stack([x, y, np.ones_like(x)], axis=-1)
    dirs = dirs @ pose.rotation.T
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def token_ray(pose: CameraPose, scale_grid: tuple[int, int], cell: tuple[int, int],
              time_s: float) -> ExtendedRay:
    """Ray through the center of cell (i, j) of an (h, w) token grid."""
    h, w = scale_grid
    i, j = cell
    if not (0 <= i < h and 0 <= j < w):
        raise GeometryError(f"cell {cell} outside grid {scale_grid}")
    u = (j + 0.5) * pose.width / w
    v = (i + 0.5) * pose.height / h
    d = pixel_ray_directions(pose, np.array(u), np.array(v))
    o = pose.translation
    return ExtendedRay(m=np.cross(o, d), d=d, t=float(time_s))


def grid_rays(pose: CameraPose, scale_grid: tuple[int, int], time_s: float
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized token rays: (m, d, t) arrays of shape (h*w, 3/3/1), row-major."""
    h, w = scale_grid
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    us = (jj.ravel() + 0.5) * pose.width / w
    vs = (ii.ravel() + 0.5) * pose.height / h
    d = pixel_ray_directions(pose, us, vs)
    m = np.cross(np.broadcast_to(pose.translation, d.shape), d)
    return m, d, np.full(h * w, float(time_s))


def project_point(pose: CameraPose, point_global) -> tuple[float, float, bool]:
    """Pinhole projection to pixels; `in_front` is False behind the image plane."""
    p = np.asarray(point_global, dtype=np.float64)
    pc = pose.rotation.T @ (p - pose.translation)
    z = pc[2]
    in_front = z > 1e-9
    zz = z if abs(z) > 1e-9 else 1e-9
    u = pose.fx * pc[0] / zz + pose.cx
    v = pose.fy * pc[1] / zz + pose.cy
    return float(u), float(v), bool(in_front)


def project_points(pose: CameraPose, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: returns (n,2) pixel coords and (n,) in-front flags."""
    pc = (points - pose.translation) @ pose.rotation
    z = pc[:, 2]
    in_front = z > 1e-9
    zz = np.where(np.abs(z) > 1e-9, z, 1e-9)
    uv = np.stack([pose.fx * pc[:, 0] / zz + pose.cx,
                   pose.fy * pc[:, 1] / zz + pose.cy], axis=-1)
    return uv, in_front


def unproject(pose: CameraPose, u: float, v: float, depth: float) -> np.ndarray:
    """Inverse of project_point at a given camera-frame depth."""
    pc = np.array([(u - pose.cx) / pose.fx * depth, (v - pose.cy) / pose.fy * depth, depth])
    return pose.rotation @ pc + pose.translation


# Corner order: z varies slowest, then y, then x, each over (-half, +half) in
# the object frame before yaw/translation. Index bit pattern: c = 4*zbit + 2*ybit + xbit.
_CORNER_SIGNS = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)],
                         dtype=np.float64)

VISIBILITY_EXPAND = 0.2  # fraction of each image dimension


def box_corners_global(center, size, yaw: float) -> np.ndarray:
    """8 corners of an oriented box in global coordinates, documented order."""
    size = np.asarray(size, dtype=np.float64)
    if (size <= 0).any():
        raise GeometryError(f"box sizes must be positive, got {size}")
    local = _CORNER_SIGNS * (size / 2.0)
    return local @ rot_z(yaw).T + np.asarray(center, dtype=np.float64)


def box_corners_image(center, size, yaw: float, pose: CameraPose
                      ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Project the 8 box corners; visible iff any corner is in front and inside
    the image rectangle expanded by VISIBILITY_EXPAND per dimension."""
    corners = box_corners_global(center, size, yaw)
    uv, in_front = project_points(pose, corners)
    ex, ey = VISIBILITY_EXPAND * pose.width, VISIBILITY_EXPAND * pose.height
    inside = ((uv[:, 0] >= -ex) & (uv[:, 0] <= pose.width + ex) &
              (uv[:, 1] >= -ey) & (uv[:, 1] <= pose.height + ey))
    visible = bool((in_front & inside).any())
    return uv, in_front, visible


def sample_map_points(polyline, n: int) -> np.ndarray:
    """n points at equal arc-length spacing along a 3D polyline, endpoints included."""
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
        raise GeometryError(f"polyline needs >=2 3D vertices, got shape {pts.shape}")
    if n < 2:
        raise GeometryError(f"need n >= 2 sample points, got {n}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise GeometryError("zero-length polyline")
    s = np.linspace(0.0, total, n)
    return np.stack([np.interp(s, cum, pts[:, k]) for k in range(3)], axis=-1)
