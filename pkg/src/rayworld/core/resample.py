"""Parameter-free 2D resampling as constant-matrix contractions.

Both directions are exact linear maps, so gradients come for free through
`apply_axis_matrix` and oracles can evaluate the same matrices densely.
"""

from __future__ import annotations

import functools

import numpy as np

from .tensor import Tensor, apply_axis_matrix


@functools.lru_cache(maxsize=None)
def area_matrix(dst: int, src: int) -> np.ndarray:
    """Row-stochastic matrix averaging `src` cells into `dst` cells.

    Entry (i, p) is the fractional overlap of target interval i with source
    cell p, normalized so rows sum to 1.
    """
    m = np.zeros((dst, src), dtype=np.float64)
    ratio = src / dst
    for i in range(dst):
        lo, hi = i * ratio, (i + 1) * ratio
        p0, p1 = int(np.floor(lo)), int(np.ceil(hi))
        for p in range(p0, min(p1, src)):
            overlap = min(hi, p + 1) - max(lo, p)
            if overlap > 0:
                m[i, p] = overlap / ratio
    return m


@functools.lru_cache(maxsize=None)
def bilinear_matrix(dst: int, src: int) -> np.ndarray:
    """Linear interpolation from `src` samples to `dst`, half-pixel centers,
    edge-clamped."""
    m = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        x = (i + 0.5) * src / dst - 0.5
        x = min(max(x, 0.0), src - 1.0)
        p0 = int(np.floor(x))
        p1 = min(p0 + 1, src - 1)
        w = x - p0
        m[i, p0] += 1.0 - w
        m[i, p1] += w
    return m


def _apply_2d(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    y = apply_axis_matrix(x, mh.astype(x.dtype), axis=0)
    return apply_axis_matrix(y, mw.astype(x.dtype), axis=1)


def downsample_area(x: Tensor, h: int, w: int) -> Tensor:
    """Area-average an (H, W, C) map down to (h, w, C)."""
    return _apply_2d(x, area_matrix(h, x.shape[0]), area_matrix(w, x.shape[1]))


def upsample_bilinear(x: Tensor, h: int, w: int) -> Tensor:
    """Bilinearly interpolate an (h0, w0, C) map up to (h, w, C)."""
    return _apply_2d(x, bilinear_matrix(h, x.shape[0]), bilinear_matrix(w, x.shape[1]))


def resize(x: Tensor, h: int, w: int) -> Tensor:
    """Area averaging when shrinking, bilinear when growing (per axis)."""
    mh = area_matrix(h, x.shape[0]) if h < x.shape[0] else bilinear_matrix(h, x.shape[0])
    mw = area_matrix(w, x.shape[1]) if w < x.shape[1] else bilinear_matrix(w, x.shape[1])
    return _apply_2d(x, mh, mw)
