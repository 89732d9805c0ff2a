"""Encoders turning text, 3D boxes, and map elements into per-image features.

Each condition feature carries a projected center in normalized image
coordinates so the cross-attention module can apply positional alignment.
Text uses a hash-embedding vocabulary stand-in for a language encoder; the
interface (string in, features out) stays substitution-ready.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Linear, Module, Tensor, concat
from .geometry import CameraPose, box_corners_image, project_points, sample_map_points

VOCAB_SLOTS = 1024
MAP_SAMPLE_POINTS = 8
CENTER_RANGE = (-0.5, 1.5)  # expanded image rectangle, normalized


@dataclass
class ConditionFeature:
    source: str              # text | box | map
    vector: Tensor           # (width,)
    center: np.ndarray       # (2,) normalized (u, v)


@dataclass
class ConditionSet:
    """Encoded conditions for one (view, time) image."""
    features: list[ConditionFeature] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def validate(self):
        lo, hi = CENTER_RANGE
        for f in self.features:
            if not np.isfinite(f.vector.data).all():
                raise ValueError("condition feature is not finite")
            if not ((lo <= f.center) & (f.center <= hi)).all():
                raise ValueError(f"condition center {f.center} outside expanded rectangle")


def _hash_token(token: str) -> int:
    # deterministic across processes (no PYTHONHASHSEED dependence)
    h = 2166136261
    for ch in token.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h % VOCAB_SLOTS


class CategoryVocab(Module):
    """Hash-embedding table mapping strings to learned vectors."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.table = Tensor(rng.normal(0, 0.5, size=(VOCAB_SLOTS, dim)).astype(np.float32),
                            requires_grad=True)

    def __call__(self, token: str) -> Tensor:
        return self.table[_hash_token(token)]


class ConditionEncoder(Module):
    """Owns all condition-encoding parameters; produces ConditionSets."""

    def __init__(self, width: int, seed: int = 0, cat_dim: int = 16):
        rng = np.random.default_rng(seed ^ 0x5EED)
        self.width = width
        self.vocab = CategoryVocab(cat_dim, rng)
        self.text_vocab = CategoryVocab(width, rng)
        # box path: 8 corners x 2 coords -> hidden -> concat category -> width
        self.box_fc1 = Linear(16, 32, rng)
        self.box_fc2 = Linear(32, 32, rng)
        self.box_out = Linear(32 + cat_dim, width, rng)
        # map path: per-point 2 coords -> hidden -> max-pool -> concat category -> width
        self.map_fc1 = Linear(2, 32, rng)
        self.map_fc2 = Linear(32, 32, rng)
        self.map_out = Linear(32 + cat_dim, width, rng)

    # -- text ---------------------------------------------------------------

    def encode_text(self, description: str) -> list[ConditionFeature]:
        """One feature per whitespace token, centered at the image midpoint."""
        feats = []
        for token in description.split():
            feats.append(ConditionFeature(
                source="text", vector=self.text_vocab(token),
                center=np.array([0.5, 0.5])))
        return feats

    # -- boxes --------------------------------------------------------------

    def encode_box(self, center, size, yaw: float, category: str,
                   pose: CameraPose) -> ConditionFeature | None:
        """None when the box is not visible in this view."""
        uv, in_front, visible = box_corners_image(center, size, yaw, pose)
        if not visible:
            return None
        norm = uv / np.array([pose.width, pose.height])
        lo, hi = CENTER_RANGE
        c = np.clip(norm[in_front].mean(axis=0), lo, hi)
        coords = Tensor(np.clip(norm, -2.0, 3.0).reshape(16).astype(np.float32))
        h = self.box_fc2(self.box_fc1(coords).tanh()).tanh()
        vec = self.box_out(concat([h, self.vocab(category)], axis=0))
        return ConditionFeature(source="box", vector=vec, center=c)

    # -- map elements -------------------------------------------------------

    def encode_map_element(self, polyline, category: str,
                           pose: CameraPose, n_points: int = MAP_SAMPLE_POINTS
                           ) -> ConditionFeature | None:
        """Point-sampled polyline through a shared point network with max
        pooling (point-order invariant); None when fully behind the camera."""
        pts = sample_map_points(polyline, n_points)
        uv, in_front = project_points(pose, pts)
        if not in_front.any():
            return None
        norm = uv / np.array([pose.width, pose.height])
        lo, hi = CENTER_RANGE
        inside = in_front & (norm[:, 0] >= lo) & (norm[:, 0] <= hi) \
            & (norm[:, 1] >= lo) & (norm[:, 1] <= hi)
        if not inside.any():
            return None
        c = np.clip(norm[in_front].mean(axis=0), lo, hi)
        coords = Tensor(np.clip(norm[in_front], -2.0, 3.0).astype(np.float32))
        h = self.map_fc2(self.map_fc1(coords).tanh()).tanh()  # (n_vis, 32)
        pooled = _maxpool_rows(h)
        vec = self.map_out(concat([pooled, self.vocab(category)], axis=0))
        return ConditionFeature(source="map", vector=vec, center=c)

    # -- per-image assembly -------------------------------------------------

    def encode_image_conditions(self, pose: CameraPose, caption: str = "",
                                boxes: list[dict] | None = None,
                                lanes: list[dict] | None = None) -> ConditionSet:
        """Any subset of {text, boxes, map} is valid; absent geometry yields
        no feature for this view."""
        feats: list[ConditionFeature] = []
        feats.extend(self.encode_text(caption))
        for b in boxes or []:
            f = self.encode_box(b["center"], b["size"], b["yaw"], b["category"], pose)
            if f is not None:
                feats.append(f)
        for ln in lanes or []:
            f = self.encode_map_element(ln["vertices"], ln["category"], pose)
            if f is not None:
                feats.append(f)
        return ConditionSet(feats)


def _maxpool_rows(h: Tensor) -> Tensor:
    """Coordinate-wise max over rows, differentiable via argmax gather."""
    idx = np.argmax(h.data, axis=0)
    cols = np.arange(h.shape[1])
    return h[idx, cols]
