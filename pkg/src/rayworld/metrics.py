"""Image and rollout metrics: PSNR, long-horizon drift curves, box-color IoU
against exact rendered silhouettes, and cross-view consistency on
geometrically overlapping regions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, pixel_ray_directions, project_points
from .toyworld import CUBOID_PALETTE, Cuboid, SceneSpec, render_view


class MetricError(ValueError):
    pass


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf on an exact match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def sequence_psnr(pred_frames: list[list[np.ndarray]],
                  gt_frames: list[list[np.ndarray]]) -> list[float]:
    """Per-frame PSNR, averaged over views (frames with an exact match in
    every view report +inf)."""
    if len(pred_frames) != len(gt_frames):
        raise MetricError(f"{len(pred_frames)} pred vs {len(gt_frames)} gt frames")
    out = []
    for pf, gf in zip(pred_frames, gt_frames):
        vals = [psnr(p, g) for p, g in zip(pf, gf)]
        out.append(float("inf") if all(np.isinf(vals)) else
                   float(np.mean([v for v in vals if np.isfinite(v)]) if
                         any(np.isfinite(v) for v in vals) else float("inf")))
    return out


@dataclass
class DriftCurve:
    psnr_per_frame: list[float]

    @property
    def last(self) -> float:
        return self.psnr_per_frame[-1]

    @property
    def mean_slope(self) -> float:
        vals = [v for v in self.psnr_per_frame if np.isfinite(v)]
        if len(vals) < 2:
            return 0.0
        return float((vals[-1] - vals[0]) / (len(vals) - 1))


def metric_drift_curve(pred_frames: list[list[np.ndarray]],
                       gt_frames: list[list[np.ndarray]]) -> DriftCurve:
    """PSNR versus frame index for a rollout against ground truth."""
    return DriftCurve(sequence_psnr(pred_frames, gt_frames))


# --------------------------------------------------------------------------
# box-color IoU


def _box_silhouette(box: dict, pose: CameraPose, time: float) -> np.ndarray:
    """Exact rendered silhouette of one box in a view (H, W) bool."""
    from .toyworld import _ray_box_t
    cub = Cuboid(center=np.asarray(box["center"], dtype=float),
                 size=np.asarray(box["size"], dtype=float),
                 yaw=float(box["yaw"]), velocity=np.zeros(3),
                 color=np.asarray(box.get("color", (1, 0, 0)), dtype=float),
                 category=box.get("category", "box"))
    h, w = pose.height, pose.width
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    dirs = pixel_ray_directions(pose, jj.ravel() + 0.5, ii.ravel() + 0.5)
    tt = _ray_box_t(pose.translation, dirs, cub, time)
    return np.isfinite(tt).reshape(h, w)


def nearest_color_mask(image: np.ndarray, color, palette=None,
                       min_separation: float = 0.05) -> np.ndarray:
    """Pixels whose nearest palette color is `color` (H, W) bool."""
    palette = np.asarray(palette if palette is not None else CUBOID_PALETTE,
                         dtype=float)
    color = np.asarray(color, dtype=float)
    d_to_target = np.linalg.norm(palette - color, axis=1)
    ti = int(np.argmin(d_to_target))
    others = np.delete(np.arange(len(palette)), ti)
    if len(others) and np.linalg.norm(palette[others] - palette[ti],
                                      axis=1).min() < min_separation:
        raise MetricError("palette color collision: classification is ambiguous")
    dists = np.linalg.norm(image[..., None, :] - palette, axis=-1)  # (H, W, P)
    return np.argmin(dists, axis=-1) == ti


def metric_box_color_iou(image: np.ndarray, box: dict, pose: CameraPose,
                         color, time: float = 0.0, palette=None) -> float:
    """IoU between the nearest-color-classified pixel mask of a generated
    image and the box's exact rendered silhouette. Pixels closer to the sky
    or ground colors than to any object color count as background."""
    sil = _box_silhouette(box, pose, time)
    if not sil.any():
        raise MetricError("box is not visible in this view")
    from .toyworld import GROUND_A, GROUND_B, SKY
    palette = np.asarray(palette if palette is not None else CUBOID_PALETTE,
                         dtype=float)
    full = np.concatenate([palette, [SKY, GROUND_A, GROUND_B]])
    pred = nearest_color_mask(image, color, full)
    inter = float((pred & sil).sum())
    union = float((pred | sil).sum())
    return inter / union if union else 0.0


# --------------------------------------------------------------------------
# cross-view consistency


def cross_view_psnr(img_a: np.ndarray, img_b: np.ndarray,
                    pose_a: CameraPose, pose_b: CameraPose,
                    scene: SceneSpec, time: float,
                    min_pixels: int = 8) -> float | None:
    """Consistency of two generated views of the same instant.

    Scene geometry (known exactly) gives the 3D hit point of each pixel in
    view A; points also visible in view B are bilinearly sampled there and
    compared against view A's colors. None when the views barely overlap.
    """
    _, depth = render_view(scene, pose_a, time, with_depth=True)
    h, w = pose_a.height, pose_a.width
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    dirs = pixel_ray_directions(pose_a, jj.ravel() + 0.5, ii.ravel() + 0.5)
    hit = np.isfinite(depth.ravel())
    pts = pose_a.translation + depth.ravel()[hit, None] * dirs[hit]
    uv, in_front = project_points(pose_b, pts)
    hb, wb = pose_b.height, pose_b.width
    ok = in_front & (uv[:, 0] >= 0.5) & (uv[:, 0] <= wb - 0.5) \
        & (uv[:, 1] >= 0.5) & (uv[:, 1] <= hb - 0.5)
    # occlusion check against view B's exact depth
    _, depth_b = render_view(scene, pose_b, time, with_depth=True)
    db = _bilinear_sample(depth_b[..., None], uv[ok])[:, 0]
    dist_b = np.linalg.norm(pts[ok] - pose_b.translation, axis=1)
    vis = np.abs(db - dist_b) < 0.05 * np.maximum(dist_b, 1.0)
    if vis.sum() < min_pixels:
        return None
    col_a = img_a.reshape(-1, 3)[hit][ok][vis]
    col_b = _bilinear_sample(img_b, uv[ok][vis])
    return psnr(col_a, col_b)


def _bilinear_sample(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) at pixel coordinates (u=x, v=y), half-pixel centers."""
    h, w = image.shape[:2]
    x = np.clip(uv[:, 0] - 0.5, 0, w - 1)
    y = np.clip(uv[:, 1] - 0.5, 0, h - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return (image[y0, x0] * (1 - fx) * (1 - fy) + image[y0, x1] * fx * (1 - fy)
            + image[y1, x0] * (1 - fx) * fy + image[y1, x1] * fx * fy)


def token_bit_accuracy(pred_tokens, gt_tokens) -> float:
    """Fraction of matching bits across nested [frame][view][scale] tokens."""
    def flat(x):
        if isinstance(x, np.ndarray):
            return [np.sign(x).ravel()]
        return [r for e in x for r in flat(e)]
    a = np.concatenate(flat(pred_tokens))
    b = np.concatenate(flat(gt_tokens))
    if a.shape != b.shape:
        raise MetricError("token structure mismatch")
    return float((a == b).mean())
