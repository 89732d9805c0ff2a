"""Rotary position codes: 1D, axial 2D, and the 7D camera-ray code.

A rotary code is stored as one angle per dimension pair; applying it rotates
pairs (2p, 2p+1) of a query/key vector. The ray code splits a head dimension
d into 3 blocks of d/8 for the moment, 3 blocks of d/8 for the direction, and
one block of d/4 for time, so attention logits depend only on coordinate
differences between the two tokens' rays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Tensor
from .geometry import ExtendedRay


class RopeConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RopeConfig:
    base: float = 10000.0
    moment_scale: float = 10.0     # multiplies m coordinates
    direction_scale: float = 100.0  # multiplies d coordinates
    time_scale: float = 1.0        # multiplies t
    ref_resolution: int = 64       # axial 2D normalization target

    def __post_init__(self):
        if min(self.base, self.moment_scale, self.direction_scale,
               self.time_scale, self.ref_resolution) <= 0:
            raise RopeConfigError("all rope factors must be positive")

    def to_dict(self) -> dict:
        return {"base": self.base, "moment_scale": self.moment_scale,
                "direction_scale": self.direction_scale, "time_scale": self.time_scale,
                "ref_resolution": self.ref_resolution}

    @staticmethod
    def from_dict(d: dict) -> "RopeConfig":
        return RopeConfig(**d)


@dataclass(frozen=True)
class RotaryCode:
    """Per-pair rotation angles for a d-dim head; angles has shape (..., d/2)."""
    angles: np.ndarray

    @property
    def dim(self) -> int:
        return self.angles.shape[-1] * 2

    def matrix(self) -> np.ndarray:
        """Dense block-diagonal rotation matrix (oracle/debug path)."""
        ang = np.atleast_1d(self.angles)
        if ang.ndim != 1:
            raise RopeConfigError("matrix() is defined for a single code")
        d = self.dim
        r = np.zeros((d, d))
        c, s = np.cos(ang), np.sin(ang)
        for p in range(d // 2):
            r[2 * p, 2 * p] = c[p]
            r[2 * p, 2 * p + 1] = -s[p]
            r[2 * p + 1, 2 * p] = s[p]
            r[2 * p + 1, 2 * p + 1] = c[p]
        return r

    def inverse(self) -> "RotaryCode":
        return RotaryCode(-self.angles)

    def compose(self, other: "RotaryCode") -> "RotaryCode":
        return RotaryCode(self.angles + other.angles)


def rope_angles_1d(position, n: int, base: float = 10000.0) -> np.ndarray:
    """Angles for a 1D rotary code over n dims: pair p rotates by
    position * base**(-2p/n)."""
    if n % 2 != 0:
        raise RopeConfigError(f"rotary dimension must be even, got {n}")
    freqs = base ** (-2.0 * np.arange(n // 2) / n)
    return np.multiply.outer(np.asarray(position, dtype=np.float64), freqs)


def rope_1d(position: float, n: int, base: float = 10000.0) -> RotaryCode:
    return RotaryCode(rope_angles_1d(position, n, base).reshape(n // 2))


def rope_axial_2d(row, col, image_h: int, image_w: int, ref_resolution: int,
                  n: int, base: float = 10000.0) -> RotaryCode:
    """First half encodes row * ref/image_h, second half col * ref/image_w."""
    if n % 4 != 0:
        raise RopeConfigError(f"axial 2D rotary needs dim divisible by 4, got {n}")
    if image_h <= 0 or image_w <= 0:
        raise RopeConfigError(f"image extents must be positive, got {image_h}x{image_w}")
    return RotaryCode(axial_2d_angles(np.asarray(row, dtype=np.float64),
                                      np.asarray(col, dtype=np.float64),
                                      image_h, image_w, ref_resolution, n, base))


def axial_2d_angles(rows: np.ndarray, cols: np.ndarray, image_h: int, image_w: int,
                    ref_resolution: int, n: int, base: float = 10000.0) -> np.ndarray:
    """Vectorized axial 2D angles, shape rows.shape + (n/2,)."""
    if image_h <= 0 or image_w <= 0:
        raise RopeConfigError(f"image extents must be positive, got {image_h}x{image_w}")
    a_row = rope_angles_1d(rows * (ref_resolution / image_h), n // 2, base)
    a_col = rope_angles_1d(cols * (ref_resolution / image_w), n // 2, base)
    return np.concatenate([a_row, a_col], axis=-1)


def ray_rotation(ray: ExtendedRay, cfg: RopeConfig, d: int) -> RotaryCode:
    """7D ray rotary code over a head dimension d (divisible by 16)."""
    m = np.asarray(ray.m, dtype=np.float64).reshape(1, 3)
    dd = np.asarray(ray.d, dtype=np.float64).reshape(1, 3)
    t = np.asarray([ray.t], dtype=np.float64)
    return RotaryCode(ray_angles(m, dd, t, cfg, d)[0])


def ray_angles(m: np.ndarray, d_vec: np.ndarray, t: np.ndarray, cfg: RopeConfig,
               d: int) -> np.ndarray:
    """Vectorized ray code angles for n rays: (n,3),(n,3),(n,) -> (n, d/2)."""
    if d % 16 != 0:
        raise RopeConfigError(f"head dimension must be divisible by 16, got {d}")
    blocks = []
    for c in range(3):
        blocks.append(rope_angles_1d(cfg.moment_scale * m[:, c], d // 8, cfg.base))
    for c in range(3):
        blocks.append(rope_angles_1d(cfg.direction_scale * d_vec[:, c], d // 8, cfg.base))
    blocks.append(rope_angles_1d(cfg.time_scale * t, d // 4, cfg.base))
    return np.concatenate(blocks, axis=-1)


def apply_rotary(code: RotaryCode, vec) -> Tensor | np.ndarray:
    """Rotate pairs (2p, 2p+1) of `vec` by the code's angles."""
    return apply_rotary_angles(code.angles, vec)


def apply_rotary_angles(angles: np.ndarray, vec):
    """Pairwise rotation by precomputed angles; works on Tensors (autodiff)
    and plain arrays. `angles` broadcasts against vec[..., ::2]."""
    is_tensor = isinstance(vec, Tensor)
    d = vec.shape[-1]
    if angles.shape[-1] * 2 != d:
        raise RopeConfigError(
            f"rotary code dim {angles.shape[-1] * 2} does not match vector dim {d}")
    cos = np.cos(angles)
    sin = np.sin(angles)
    if is_tensor:
        cos_t = Tensor(cos.astype(vec.dtype))
        sin_t = Tensor(sin.astype(vec.dtype))
        shape = vec.shape[:-1] + (d // 2, 2)
        v = vec.reshape(shape)
        even = v[..., 0]
        odd = v[..., 1]
        from .core import stack
        out_even = even * cos_t - odd * sin_t
        out_odd = even * sin_t + odd * cos_t
        return stack([out_even, out_odd], axis=-1).reshape(vec.shape)
    v = np.asarray(vec)
    shape = v.shape[:-1] + (d // 2, 2)
    vv = v.reshape(shape)
    even, odd = vv[..., 0], vv[..., 1]
    out = np.empty_like(vv)
    out[..., 0] = even * cos - odd * sin
    out[..., 1] = even * sin + odd * cos
    return out.reshape(v.shape)
