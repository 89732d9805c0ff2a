"""Dual-causal transformer over multi-view multi-scale token sequences.

Each block runs image-wise self-attention (axial 2D rotary, per-image scale
causality), a zero-init-gated spatio-temporal attention over all views and
frames (7D ray rotary, dual-causal mask), image-wise cross-attention to
condition features, and an MLP. Scale steps are generated in parallel, so
attention within one (frame, scale) step is bidirectional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditioning import ConditionEncoder, ConditionSet
from .core import (LayerNorm, Linear, Module, Tensor, concat, gelu, softmax_lastdim)
from .geometry import CameraPose, WorldFrame, grid_rays
from .rope import RopeConfig, apply_rotary_angles, ray_angles
from .tokenizer import ScaleSchedule

CAUSALITY_VARIANTS = ("prefix_scales", "same_scale", "all_scales")
ST_VARIANTS = ("global", "decoupled", "none")
POS_VARIANTS = ("relative_ray", "absolute_ray", "none")

NEG_INF = -np.inf


class ConfigError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    width: int = 128
    heads: int = 4
    head_dim: int = 32
    sched: ScaleSchedule = field(default_factory=ScaleSchedule)
    causality: str = "prefix_scales"
    st_variant: str = "global"
    pos_variant: str = "relative_ray"
    rope: RopeConfig = field(default_factory=RopeConfig)
    mlp_ratio: int = 4
    ray_freq_bands: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.width != self.heads * self.head_dim:
            raise ConfigError(f"width {self.width} != heads*head_dim "
                              f"{self.heads}x{self.head_dim}")
        if self.head_dim % 16 != 0:
            raise ConfigError(f"head_dim must be divisible by 16, got {self.head_dim}")
        if self.causality not in CAUSALITY_VARIANTS:
            raise ConfigError(f"unknown causality variant {self.causality!r}")
        if self.st_variant not in ST_VARIANTS:
            raise ConfigError(f"unknown spatio-temporal variant {self.st_variant!r}")
        if self.pos_variant not in POS_VARIANTS:
            raise ConfigError(f"unknown position variant {self.pos_variant!r}")

    def to_dict(self) -> dict:
        return {"layers": self.layers, "width": self.width, "heads": self.heads,
                "head_dim": self.head_dim, "sched": self.sched.to_dict(),
                "causality": self.causality, "st_variant": self.st_variant,
                "pos_variant": self.pos_variant, "rope": self.rope.to_dict(),
                "mlp_ratio": self.mlp_ratio, "ray_freq_bands": self.ray_freq_bands,
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["sched"] = ScaleSchedule.from_dict(d["sched"])
        d["rope"] = RopeConfig.from_dict(d["rope"])
        return ModelConfig(**d)


# --------------------------------------------------------------------------
# sequence layout


@dataclass
class SequenceLayout:
    """Full (time, scale, view, row, col) indexing plus precomputed rotary
    angle tables and group ids for masking. Token order is lexicographic by
    (t, k, v, row-major spatial)."""
    sched: ScaleSchedule
    steps: list[tuple[int, int]]              # (t_idx, k) in order, k is 0-based
    step_slices: list[slice]
    t_idx: np.ndarray                         # (N,)
    k_idx: np.ndarray
    v_idx: np.ndarray
    row: np.ndarray
    col: np.ndarray
    time_s: np.ndarray
    image_id: np.ndarray                      # unique per (t, v)
    track_id: np.ndarray                      # unique per (v, k, row, col)
    ray_m: np.ndarray                         # (N, 3) global frame
    ray_d: np.ndarray
    local_ray: np.ndarray                     # (N, 6) anchor-frame (m, d)
    axial_angles: np.ndarray                  # (N, head_dim/2)
    ray_rot_angles: np.ndarray                # (N, head_dim/2)
    num_views: int
    poses: list[list[CameraPose]]             # [t][v]

    @property
    def num_tokens(self) -> int:
        return len(self.t_idx)

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    def step_index(self, t: int, k: int) -> int:
        return self.steps.index((t, k))

    def frame_token_mask(self, t: int) -> np.ndarray:
        return self.t_idx == t


def build_layout(sched: ScaleSchedule, poses: list[list[CameraPose]],
                 times: list[float], cfg: ModelConfig) -> SequenceLayout:
    """Layout for T frames given per-frame per-view camera poses (global frame)."""
    if not poses:
        raise ContractError("layout needs at least one frame")
    hd = cfg.head_dim
    recs: dict[str, list] = {k: [] for k in
                             ("t", "k", "v", "i", "j", "time", "img", "trk")}
    ms, ds, locs = [], [], []
    steps, slices = [], []
    pos = 0
    num_views = len(poses[0])
    for t, (frame_poses, time_s) in enumerate(zip(poses, times)):
        anchor = WorldFrame(frame_poses[0].rotation, frame_poses[0].translation)
        for k, (h, w) in enumerate(sched.grids):
            start = pos
            for v, pose in enumerate(frame_poses):
                m, d, _ = grid_rays(pose, (h, w), time_s)
                ms.append(m)
                ds.append(d)
                lp = anchor.to_local(pose)
                lm, ld, _ = grid_rays(lp, (h, w), 0.0)
                locs.append(np.concatenate([lm, ld], axis=-1))
                n = h * w
                jj, ii = np.meshgrid(np.arange(w), np.arange(h))
                recs["t"].extend([t] * n)
                recs["k"].extend([k] * n)
                recs["v"].extend([v] * n)
                recs["i"].extend(ii.ravel())
                recs["j"].extend(jj.ravel())
                recs["time"].extend([time_s] * n)
                recs["img"].extend([t * num_views + v] * n)
                base = (v * len(sched.grids) + k) * 10**6
                recs["trk"].extend(base + ii.ravel() * 10**3 + jj.ravel())
                pos += n
            steps.append((t, k))
            slices.append(slice(start, pos))
    ray_m = np.concatenate(ms)
    ray_d = np.concatenate(ds)
    t_idx = np.array(recs["t"])
    k_idx = np.array(recs["k"])
    time_arr = np.array(recs["time"], dtype=np.float64)
    # axial 2D positions normalized to the reference resolution
    hs = np.array([sched.grids[k][0] for k in k_idx], dtype=np.float64)
    ws = np.array([sched.grids[k][1] for k in k_idx], dtype=np.float64)
    rows = np.array(recs["i"], dtype=np.float64)
    cols = np.array(recs["j"], dtype=np.float64)
    ref = cfg.rope.ref_resolution
    axial = np.concatenate([
        _angles_1d(rows * ref / hs, hd // 2, cfg.rope.base),
        _angles_1d(cols * ref / ws, hd // 2, cfg.rope.base)], axis=-1)
    rot = ray_angles(ray_m, ray_d, time_arr, cfg.rope, hd)
    return SequenceLayout(
        sched=sched, steps=steps, step_slices=slices,
        t_idx=t_idx, k_idx=k_idx, v_idx=np.array(recs["v"]),
        row=np.array(recs["i"]), col=np.array(recs["j"]), time_s=time_arr,
        image_id=np.array(recs["img"]), track_id=np.array(recs["trk"]),
        ray_m=ray_m, ray_d=ray_d, local_ray=np.concatenate(locs),
        axial_angles=axial, ray_rot_angles=rot,
        num_views=num_views, poses=[list(p) for p in poses])


def _angles_1d(position: np.ndarray, n: int, base: float) -> np.ndarray:
    freqs = base ** (-2.0 * np.arange(n // 2) / n)
    return np.multiply.outer(position, freqs)


# --------------------------------------------------------------------------
# masks


def step_allowed(variant: str, t: int, k: int, tp: int, kp: int) -> bool:
    """May step (t, k) attend step (tp, kp)?"""
    if variant == "prefix_scales":
        return tp <= t and kp <= k
    if variant == "all_scales":
        return tp < t or (tp == t and kp <= k)
    if variant == "same_scale":
        return (tp < t and kp == k) or (tp == t and kp <= k)
    raise ConfigError(f"unknown causality variant {variant!r}")


def dual_causal_step_mask(steps: list[tuple[int, int]], variant: str) -> np.ndarray:
    """Boolean (S, S) matrix over (t, k) steps; row attends column."""
    if not steps:
        raise ContractError("empty layout")
    s = len(steps)
    allowed = np.zeros((s, s), dtype=bool)
    for a, (t, k) in enumerate(steps):
        for b, (tp, kp) in enumerate(steps):
            allowed[a, b] = step_allowed(variant, t, k, tp, kp)
    return allowed


def _to_additive(allowed: np.ndarray) -> np.ndarray:
    mask = np.zeros(allowed.shape, dtype=np.float32)
    mask[~allowed] = NEG_INF
    return mask


def dual_causal_mask(layout: SequenceLayout, variant: str) -> np.ndarray:
    """Token-level additive mask (0 / -inf) for the spatio-temporal module."""
    step_ok = dual_causal_step_mask(layout.steps, variant)
    sid = np.empty(layout.num_tokens, dtype=int)
    for s, sl in enumerate(layout.step_slices):
        sid[sl] = s
    return _to_additive(step_ok[np.ix_(sid, sid)])


def image_attention_mask(layout: SequenceLayout) -> np.ndarray:
    """Same image, scale-causal (k' <= k), bidirectional within a step."""
    same_img = layout.image_id[:, None] == layout.image_id[None, :]
    scale_ok = layout.k_idx[None, :] <= layout.k_idx[:, None]
    return _to_additive(same_img & scale_ok)


def decoupled_masks(layout: SequenceLayout) -> tuple[np.ndarray, np.ndarray]:
    """Cross-view per frame (scale-causal) and cross-frame per pixel track."""
    same_t = layout.t_idx[:, None] == layout.t_idx[None, :]
    scale_ok = layout.k_idx[None, :] <= layout.k_idx[:, None]
    cross_view = same_t & scale_ok
    same_track = layout.track_id[:, None] == layout.track_id[None, :]
    causal_t = layout.t_idx[None, :] <= layout.t_idx[:, None]
    cross_frame = same_track & causal_t
    return _to_additive(cross_view), _to_additive(cross_frame)


# --------------------------------------------------------------------------
# attention helpers


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, w = x.shape
    return x.reshape(b, n, heads, w // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * hd)


class Attention(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator,
                 zero_init_gate: bool = False):
        self.heads = heads
        self.q = Linear(width, width, rng)
        self.k = Linear(width, width, rng)
        self.v = Linear(width, width, rng)
        self.out = Linear(width, width, rng, scale=0.5 / np.sqrt(width))
        self.gate = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True) \
            if zero_init_gate else None

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask: np.ndarray | None,
                 angles_q: np.ndarray | None = None,
                 angles_k: np.ndarray | None = None) -> Tensor:
        """x_q (B, Nq, W) attends x_kv (B, Nk, W); mask is additive (Nq, Nk).

        angles_* are rotary angle tables broadcastable to (B?, N, head_dim/2);
        the same rotation family applied to both sides makes logits depend on
        angle differences only.
        """
        hd = x_q.shape[-1] // self.heads
        q = _split_heads(self.q(x_q), self.heads)
        k = _split_heads(self.k(x_kv), self.heads)
        v = _split_heads(self.v(x_kv), self.heads)
        if angles_q is not None:
            q = apply_rotary_angles(_head_bcast(angles_q), q)
        if angles_k is not None:
            k = apply_rotary_angles(_head_bcast(angles_k), k)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        if mask is not None:
            scores = scores + Tensor(mask.astype(scores.dtype))
        attn = softmax_lastdim(scores)
        y = _merge_heads(attn @ v)
        y = self.out(y)
        if self.gate is not None:
            y = y * self.gate
        return y


def _head_bcast(angles: np.ndarray) -> np.ndarray:
    """(N, p) -> (N, p) usable against (B, H, N, p); (B, N, p) -> (B, 1, N, p)."""
    if angles.ndim == 3:
        return angles[:, None, :, :]
    return angles


class Mlp(Module):
    def __init__(self, width: int, ratio: int, rng: np.random.Generator):
        self.fc1 = Linear(width, width * ratio, rng)
        self.fc2 = Linear(width * ratio, width, rng, scale=0.5 / np.sqrt(width * ratio))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class Block(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        w = cfg.width
        self.cfg = cfg
        self.ln_img = LayerNorm(w)
        self.attn_img = Attention(w, cfg.heads, rng)
        if cfg.st_variant == "global":
            self.ln_st = LayerNorm(w)
            self.attn_st = Attention(w, cfg.heads, rng, zero_init_gate=True)
        elif cfg.st_variant == "decoupled":
            self.ln_st = LayerNorm(w)
            self.attn_st = Attention(w, cfg.heads, rng, zero_init_gate=True)
            self.ln_st2 = LayerNorm(w)
            self.attn_st2 = Attention(w, cfg.heads, rng, zero_init_gate=True)
        self.ln_cond = LayerNorm(w)
        self.attn_cond = Attention(w, cfg.heads, rng, zero_init_gate=True)
        self.ln_mlp = LayerNorm(w)
        self.mlp = Mlp(w, cfg.mlp_ratio, rng)


class WorldModel(Module):
    """Token embedding, stacked dual-causal blocks, bitwise logit head."""

    def __init__(self, cfg: ModelConfig, condition_encoder: ConditionEncoder | None = None):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        w = cfg.width
        c = cfg.sched.bits
        self.start_embed = Tensor(rng.normal(0, 0.02, size=(w,)).astype(np.float32),
                                  requires_grad=True)
        self.input_proj = Linear(c, w, rng)
        self.scale_embed = Tensor(
            rng.normal(0, 0.02, size=(cfg.sched.num_scales, w)).astype(np.float32),
            requires_grad=True)
        nfeat = 2 * cfg.ray_freq_bands * 6
        self.ray_embed = Linear(nfeat, w, rng)
        self.abs_ray_embed = Linear(2 * cfg.ray_freq_bands * 7, w, rng) \
            if cfg.pos_variant == "absolute_ray" else None
        self.blocks = [Block(cfg, rng) for _ in range(cfg.layers)]
        self.ln_f = LayerNorm(w)
        self.head = Linear(w, c, rng)
        self.condition_encoder = condition_encoder or ConditionEncoder(w, seed=cfg.seed)

    # -- embeddings ---------------------------------------------------------

    def _sinusoid(self, coords: np.ndarray) -> np.ndarray:
        """(..., D) coordinates -> (..., 2*bands*D) sin/cos features."""
        bands = 2.0 ** np.arange(self.cfg.ray_freq_bands)
        ang = coords[..., None] * bands  # (..., D, bands)
        feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
        return feats.reshape(coords.shape[:-1] + (-1,))

    def embed_inputs(self, inputs: np.ndarray, start_mask: np.ndarray,
                     layouts: list[SequenceLayout]) -> Tensor:
        """inputs: (B, N, c) teacher-forcing content (zeros at start steps);
        adds the frame-anchored absolute ray embedding and scale embedding."""
        b, n, _ = inputs.shape
        lay0 = layouts[0]
        lat = self.input_proj(Tensor(inputs.astype(np.float32)))
        sm = start_mask.astype(np.float32)[None, :, None]
        lat = lat * (1.0 - sm) + self.start_embed.reshape(1, 1, -1) * sm
        local = np.stack([lay.local_ray for lay in layouts])  # (B, N, 6)
        lat = lat + self.ray_embed(Tensor(self._sinusoid(local).astype(np.float32)))
        if self.abs_ray_embed is not None:
            g = np.stack([np.concatenate(
                [lay.ray_m * self.cfg.rope.moment_scale * 0.1,
                 lay.ray_d, lay.time_s[:, None]], axis=-1) for lay in layouts])
            lat = lat + self.abs_ray_embed(Tensor(self._sinusoid(g).astype(np.float32)))
        lat = lat + self.scale_embed[lay0.k_idx]
        return lat

    # -- full-sequence (teacher-forced, masked) forward ---------------------

    def forward_latents(self, lat: Tensor, layouts: list[SequenceLayout],
                        conds: "BatchedConditions | None" = None,
                        collect_st_latents: bool = False
                        ) -> tuple[Tensor, list[Tensor]]:
        lay0 = layouts[0]
        img_mask = image_attention_mask(lay0)
        axial = np.stack([lay.axial_angles for lay in layouts])
        ray_rot = np.stack([lay.ray_rot_angles for lay in layouts]) \
            if self.cfg.pos_variant == "relative_ray" else None
        st_masks: tuple[np.ndarray, ...] = ()
        if self.cfg.st_variant == "global":
            st_masks = (dual_causal_mask(lay0, self.cfg.causality),)
        elif self.cfg.st_variant == "decoupled":
            st_masks = decoupled_masks(lay0)
        st_latents: list[Tensor] = []
        x = lat
        for blk in self.blocks:
            h = blk.ln_img(x)
            x = x + blk.attn_img(h, h, img_mask, axial, axial)
            if self.cfg.st_variant != "none":
                h = blk.ln_st(x)
                if collect_st_latents:
                    st_latents.append(h)
                x = x + blk.attn_st(h, h, st_masks[0], ray_rot, ray_rot)
                if self.cfg.st_variant == "decoupled":
                    h2 = blk.ln_st2(x)
                    x = x + blk.attn_st2(h2, h2, st_masks[1], ray_rot, ray_rot)
            if conds is not None and conds.total > 0:
                h = blk.ln_cond(x)
                x = x + blk.attn_cond(h, conds.features, conds.mask(lay0),
                                      axial, conds.angles(self.cfg))
            x = x + blk.mlp(blk.ln_mlp(x))
        return x, st_latents

    def logits_from_latents(self, x: Tensor) -> Tensor:
        return self.head(self.ln_f(x))


@dataclass
class BatchedConditions:
    """Per-batch condition features padded to a common count.

    features: (B, Nc, width) Tensor; image ids (B, Nc) with -1 padding.
    """
    features: Tensor
    image_ids: np.ndarray
    centers: np.ndarray  # (B, Nc, 2) normalized (u, v)
    total: int

    def mask(self, layout: SequenceLayout) -> np.ndarray:
        tok = layout.image_id  # (N,)
        ok = tok[None, :, None] == self.image_ids[:, None, :]  # (B, N, Nc)
        m = np.where(ok, 0.0, NEG_INF).astype(np.float32)
        return m[:, None, :, :]  # broadcast over heads

    def angles(self, cfg: ModelConfig) -> np.ndarray:
        ref = cfg.rope.ref_resolution
        rows = self.centers[..., 1] * ref
        cols = self.centers[..., 0] * ref
        hd = cfg.head_dim
        a = np.concatenate([_angles_1d(rows, hd // 2, cfg.rope.base),
                            _angles_1d(cols, hd // 2, cfg.rope.base)], axis=-1)
        return a  # (B, Nc, hd/2)


def batch_conditions(cond_sets: list[dict[tuple[int, int], ConditionSet]],
                     num_views: int, width: int) -> BatchedConditions | None:
    """cond_sets[b] maps (t, v) -> ConditionSet. Returns None when empty."""
    rows = []
    for per_seq in cond_sets:
        feats = []
        for (t, v), cs in sorted(per_seq.items()):
            for f in cs.features:
                feats.append((t * num_views + v, f))
        rows.append(feats)
    nmax = max((len(r) for r in rows), default=0)
    if nmax == 0:
        return None
    b = len(rows)
    img_ids = np.full((b, nmax), -1, dtype=int)
    centers = np.zeros((b, nmax, 2))
    feat_rows = []
    total = 0
    for bi, feats in enumerate(rows):
        vecs = []
        for ni, (img, f) in enumerate(feats):
            img_ids[bi, ni] = img
            centers[bi, ni] = f.center
            vecs.append(f.vector.reshape(1, -1))
            total += 1
        pad = nmax - len(feats)
        if pad:
            vecs.append(Tensor(np.zeros((pad, width), dtype=np.float32)))
        feat_rows.append(concat(vecs, axis=0).reshape(1, nmax, width))
    return BatchedConditions(features=concat(feat_rows, axis=0),
                             image_ids=img_ids, centers=centers, total=total)


# --------------------------------------------------------------------------
# teacher-forcing inputs and the public forward


def build_step_inputs(tokens: list[list[list[np.ndarray]]],
                      layout: SequenceLayout) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forcing inputs for every token of one sequence.

    tokens[t][v][k] is an (h_k, w_k, c) array of {-1,+1} bits. Returns
    (inputs (N, c), start_mask (N,)); step k >= 1 carries the accumulated
    coarser-scale content resampled to its grid, step 0 is flagged for the
    learned start embedding.
    """
    sched = layout.sched
    c = sched.bits
    n = layout.num_tokens
    inputs = np.zeros((n, c), dtype=np.float32)
    start = np.zeros(n, dtype=bool)
    from .core import area_matrix, bilinear_matrix
    hk, wk = sched.final_grid
    for t, frame in enumerate(tokens):
        for v, per_scale in enumerate(frame):
            acc = np.zeros((hk, wk, c), dtype=np.float32)
            for k, (h, w) in enumerate(sched.grids):
                sel = (layout.t_idx == t) & (layout.v_idx == v) & (layout.k_idx == k)
                if k == 0:
                    start[sel] = True
                else:
                    mh = area_matrix(h, hk)
                    mw = area_matrix(w, wk)
                    feat = np.tensordot(mh, np.tensordot(mw, acc, axes=(1, 1)).transpose(1, 0, 2),
                                        axes=(1, 0))
                    inputs[sel] = feat.reshape(h * w, c)
                up_h = bilinear_matrix(hk, h)
                up_w = bilinear_matrix(wk, w)
                tok = per_scale[k].astype(np.float32)
                up = np.tensordot(up_h, np.tensordot(up_w, tok, axes=(1, 1)).transpose(1, 0, 2),
                                  axes=(1, 0))
                acc = acc + up
    return inputs, start


def forward_teacher_forced(model: WorldModel,
                           tokens: list[list[list[list[np.ndarray]]]],
                           layouts: list[SequenceLayout],
                           conds: BatchedConditions | None = None,
                           collect_st_latents: bool = False
                           ) -> tuple[Tensor, list[Tensor]]:
    """Masked one-pass logits for every (t, k) step of a batch of sequences.

    tokens[b][t][v][k]: (h_k, w_k, c) bit arrays. Returns (B, N, c) logits in
    layout order plus (optionally) per-layer spatio-temporal input latents.
    """
    if len(tokens) != len(layouts):
        raise ContractError(f"{len(tokens)} token sequences vs {len(layouts)} layouts")
    ins, starts = [], None
    for toks, lay in zip(tokens, layouts):
        i, s = build_step_inputs(toks, lay)
        ins.append(i)
        starts = s
    lat = model.embed_inputs(np.stack(ins), starts, layouts)
    x, st = model.forward_latents(lat, layouts, conds,
                                  collect_st_latents=collect_st_latents)
    return model.logits_from_latents(x), st
