"""Inference engine: scale-by-scale, frame-by-frame generation with a
scale-bucketed latent cache, sliding-window eviction, sampling, error
injection, and camera-programmable rollouts.

The cache stores the spatio-temporal module's pre-projection latents (the
post-norm inputs of that sublayer) per frame, per scale step, per layer; key
and value projections are applied at read time, and reads never propagate
gradient into cached values. Incremental generation with this cache
reproduces the masked full-sequence forward.
"""

from __future__ import annotations

import json
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .conditioning import ConditionSet
from .core import Tensor, concat, no_grad
from .core.resample import area_matrix, bilinear_matrix
from .geometry import CameraPose
from .model import (SequenceLayout, WorldModel, batch_conditions, build_layout,
                    build_step_inputs, step_allowed)
from .tokenizer import TokenizerNet, decode_from_scales, encode_multiscale

NEG = -np.inf


class CacheIntegrityError(RuntimeError):
    pass


class SamplerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "argmax"            # argmax | bernoulli
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("argmax", "bernoulli"):
            raise SamplerConfigError(f"unknown sampler mode {self.mode!r}")
        if self.temperature <= 0:
            raise SamplerConfigError("temperature must be positive")


def sample_bits(logits: np.ndarray, sampler: SamplerConfig,
                rng: np.random.Generator) -> np.ndarray:
    if sampler.mode == "argmax":
        return np.where(logits >= 0, 1.0, -1.0).astype(np.float32)
    p = 1.0 / (1.0 + np.exp(-logits / sampler.temperature))
    return np.where(rng.random(logits.shape) < p, 1.0, -1.0).astype(np.float32)


def inject_bitwise_errors(tokens, rate: float, seed: int):
    """Independently negate each bit with probability `rate`; nested list
    structure over arrays is preserved."""
    if not (0.0 <= rate <= 1.0):
        raise SamplerConfigError(f"error rate must be in [0,1], got {rate}")
    rng = np.random.default_rng(seed)

    def rec(x):
        if isinstance(x, np.ndarray):
            flip = rng.random(x.shape) < rate
            return np.where(flip, -x, x).astype(x.dtype)
        return [rec(e) for e in x]

    return rec(tokens)


# --------------------------------------------------------------------------
# rollout plans


@dataclass
class FramePlan:
    time_s: float
    poses: list[CameraPose]
    boxes: list[dict] = field(default_factory=list)
    lanes: list[dict] = field(default_factory=list)
    caption: str = ""


@dataclass
class RolloutPlan:
    frames: list[FramePlan]

    def __post_init__(self):
        times = [f.time_s for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"plan times must be strictly increasing, got {times}")

    def shifted(self, shift) -> "RolloutPlan":
        """Every camera translated by `shift` (global coordinates)."""
        off = np.asarray(shift, dtype=np.float64)
        return RolloutPlan([
            FramePlan(f.time_s, [p.translated(off) for p in f.poses],
                      f.boxes, f.lanes, f.caption)
            for f in self.frames])

    def rotated_z(self, yaw: float) -> "RolloutPlan":
        return RolloutPlan([
            FramePlan(f.time_s, [p.rotated_z(yaw) for p in f.poses],
                      f.boxes, f.lanes, f.caption)
            for f in self.frames])


def plan_camera_shift(plan: RolloutPlan, shift) -> RolloutPlan:
    return plan.shifted(shift)


def save_plan(plan: RolloutPlan, path: str):
    frames = []
    for f in plan.frames:
        frames.append({
            "time_s": f.time_s,
            "poses": [{
                "rotation": p.rotation.ravel().tolist(),
                "translation": p.translation.tolist(),
                "intrinsics": [p.fx, p.fy, p.cx, p.cy],
                "image": [p.width, p.height],
            } for p in f.poses],
            "boxes": [{"center": np.asarray(b["center"], dtype=float).tolist(),
                       "size": np.asarray(b["size"], dtype=float).tolist(),
                       "yaw": float(b["yaw"]), "category": b["category"]}
                      for b in f.boxes],
            "lanes": [{"vertices": np.asarray(ln["vertices"], dtype=float).tolist(),
                       "category": ln["category"]} for ln in f.lanes],
            "caption": f.caption,
        })
    with open(path, "w") as fh:
        json.dump({"frames": frames}, fh, indent=1)


def load_plan(path: str) -> RolloutPlan:
    with open(path) as fh:
        doc = json.load(fh)
    frames = []
    for f in doc["frames"]:
        poses = [CameraPose(np.array(p["rotation"]).reshape(3, 3),
                            np.array(p["translation"]),
                            *p["intrinsics"], *p["image"]) for p in f["poses"]]
        boxes = [{"center": np.array(b["center"]), "size": np.array(b["size"]),
                  "yaw": b["yaw"], "category": b["category"]}
                 for b in f.get("boxes", [])]
        lanes = [{"vertices": np.array(ln["vertices"]), "category": ln["category"]}
                 for ln in f.get("lanes", [])]
        frames.append(FramePlan(f["time_s"], poses, boxes, lanes, f.get("caption", "")))
    return RolloutPlan(frames)


# --------------------------------------------------------------------------
# recurrent cache


@dataclass
class StBucket:
    """Pre-projection latents of one (frame, scale) step: one (n_tokens, width)
    array per layer, plus the token metadata key assembly needs."""
    t_idx: int
    k: int
    latents: list[np.ndarray]
    ray_angles: np.ndarray
    track_id: np.ndarray
    # decoupled variant: pre-projection latents of the cross-frame sublayer,
    # which normalizes its input separately from the cross-view sublayer
    latents2: list[np.ndarray] | None = None

    @property
    def n(self) -> int:
        return len(self.track_id)


class RecurrentCache:
    """Sliding window of per-frame latent buckets, FIFO eviction at capacity."""

    def __init__(self, capacity: int, num_scales: int):
        if capacity < 1:
            raise CacheIntegrityError("cache capacity must be >= 1")
        self.capacity = capacity
        self.num_scales = num_scales
        self.frames: list[tuple[int, dict[int, StBucket]]] = []

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def retained_frame_indices(self) -> list[int]:
        return [t for t, _ in self.frames]

    def append_frame(self, t_idx: int, buckets: dict[int, StBucket]):
        if set(buckets) != set(range(self.num_scales)):
            raise CacheIntegrityError(
                f"frame {t_idx} buckets {sorted(buckets)} incomplete "
                f"(need scales 0..{self.num_scales - 1})")
        if self.frames and t_idx <= self.frames[-1][0]:
            raise CacheIntegrityError(
                f"frame {t_idx} appended after frame {self.frames[-1][0]}")
        self.frames.append((t_idx, buckets))
        if len(self.frames) > self.capacity:
            self.frames.pop(0)

    def admissible(self, variant: str, t: int, ks: list[int]) -> list[StBucket]:
        """Buckets any of the query steps (t, k in ks) may read, oldest first.
        Scale admissibility is re-applied per token at mask time."""
        out = []
        for t_idx, buckets in self.frames:
            if t_idx >= t:
                raise CacheIntegrityError(
                    f"cache holds frame {t_idx} not prior to query frame {t}")
            for kp in sorted(buckets):
                if any(step_allowed(variant, t, k, t_idx, kp) for k in ks):
                    out.append(buckets[kp])
        return out

    def check_bucket(self, t_idx: int, k: int):
        for t, buckets in self.frames:
            if t == t_idx:
                if k not in buckets:
                    raise CacheIntegrityError(f"bucket ({t_idx},{k}) missing")
                return
        raise CacheIntegrityError(f"frame {t_idx} not in cache")


# --------------------------------------------------------------------------
# incremental forward over one frame


def _embed_chunk(model: WorldModel, inputs: np.ndarray, start_mask: np.ndarray,
                 layout: SequenceLayout, sel: np.ndarray) -> Tensor:
    """Embed a token subset of a single-frame layout (batch size 1)."""
    lat = model.input_proj(Tensor(inputs[None].astype(np.float32)))
    sm = start_mask.astype(np.float32)[None, :, None]
    lat = lat * (1.0 - sm) + model.start_embed.reshape(1, 1, -1) * sm
    local = layout.local_ray[sel][None]
    lat = lat + model.ray_embed(Tensor(model._sinusoid(local).astype(np.float32)))
    if model.abs_ray_embed is not None:
        g = np.concatenate([layout.ray_m[sel] * model.cfg.rope.moment_scale * 0.1,
                            layout.ray_d[sel], layout.time_s[sel][:, None]],
                           axis=-1)[None]
        lat = lat + model.abs_ray_embed(Tensor(model._sinusoid(g).astype(np.float32)))
    lat = lat + model.scale_embed[layout.k_idx[sel]]
    return lat


def _detached(x) -> Tensor:
    """Constant Tensor view of a stored latent: gradient never reaches the
    cache, only the projections applied on top of it."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    return Tensor(data)


class FrameProcessor:
    """Runs the transformer over chunks (one or more consecutive scale steps)
    of the current frame, reading the cross-frame cache and maintaining the
    within-frame latent stores each sublayer needs.

    Generation calls this one scale step at a time; teacher-forced recurrent
    training forwards all scale steps of a frame in a single chunk so the
    within-frame gradient structure matches the full masked forward.
    """

    def __init__(self, model: WorldModel, cache: RecurrentCache, t_idx: int,
                 frame_poses: list[CameraPose], time_s: float,
                 conds: dict[int, ConditionSet] | None = None,
                 grad: bool = False):
        self.model = model
        self.cfg = model.cfg
        self.cache = cache
        self.t_idx = t_idx
        self.time_s = time_s
        self.grad = grad
        self.layout = build_layout(model.cfg.sched, [frame_poses], [time_s],
                                   model.cfg)
        self.next_k = 0
        nl = model.cfg.layers
        # per layer: (token indices, latent) chunks already processed
        self.img_store: list[list[tuple[np.ndarray, Tensor]]] = [[] for _ in range(nl)]
        self.st_store: list[list[tuple[np.ndarray, Tensor]]] = [[] for _ in range(nl)]
        self.st2_store: list[list[tuple[np.ndarray, Tensor]]] = [[] for _ in range(nl)]
        self.conds = None
        if conds:
            per_seq = {(0, v): cs for v, cs in conds.items()}
            self.conds = batch_conditions([per_seq], self.layout.num_views,
                                          self.cfg.width)

    # -- key assembly -------------------------------------------------------

    def _gather_img_keys(self, layer: int, chunk_sel: np.ndarray, h_chunk: Tensor):
        sels = [s for s, _ in self.img_store[layer]] + [chunk_sel]
        lats = [_detached(l) for _, l in self.img_store[layer]] + [h_chunk]
        return np.concatenate(sels), concat(lats, axis=1)

    def _img_mask(self, q_sel: np.ndarray, key_sel: np.ndarray) -> np.ndarray:
        lay = self.layout
        same = lay.image_id[q_sel][:, None] == lay.image_id[key_sel][None, :]
        ok = same & (lay.k_idx[key_sel][None, :] <= lay.k_idx[q_sel][:, None])
        m = np.zeros(ok.shape, dtype=np.float32)
        m[~ok] = NEG
        return m

    def _gather_st_keys(self, layer: int, chunk_sel: np.ndarray, h_chunk: Tensor,
                        second: bool = False):
        """Admissible cached past-frame buckets + current-frame stored chunks
        + the current chunk, with per-token (t', k', track) metadata.
        `second` selects the cross-frame sublayer's latent set (decoupled)."""
        lay = self.layout
        ks = sorted(set(lay.k_idx[chunk_sel].tolist()))
        buckets = self.cache.admissible(self.cfg.causality, self.t_idx, ks)
        store = self.st2_store if second else self.st_store
        k_parts, ang_parts, meta = [], [], []
        for b in buckets:
            lat = b.latents2[layer] if second else b.latents[layer]
            k_parts.append(_detached(lat).reshape(1, b.n, -1))
            ang_parts.append(b.ray_angles)
            meta.append(np.stack([np.full(b.n, b.t_idx, dtype=np.int64),
                                  np.full(b.n, b.k, dtype=np.int64),
                                  b.track_id.astype(np.int64)], axis=-1))
        for s, l in store[layer]:
            k_parts.append(_detached(l))
            ang_parts.append(lay.ray_rot_angles[s])
            meta.append(np.stack([np.full(len(s), self.t_idx, dtype=np.int64),
                                  lay.k_idx[s].astype(np.int64),
                                  lay.track_id[s].astype(np.int64)], axis=-1))
        k_parts.append(h_chunk)
        ang_parts.append(lay.ray_rot_angles[chunk_sel])
        meta.append(np.stack([np.full(len(chunk_sel), self.t_idx, dtype=np.int64),
                              lay.k_idx[chunk_sel].astype(np.int64),
                              lay.track_id[chunk_sel].astype(np.int64)], axis=-1))
        return concat(k_parts, axis=1), np.concatenate(ang_parts), np.concatenate(meta)

    def _st_mask(self, q_sel: np.ndarray, key_meta: np.ndarray,
                 mode: str) -> np.ndarray:
        lay = self.layout
        tq = np.full(len(q_sel), self.t_idx, dtype=np.int64)[:, None]
        kq = lay.k_idx[q_sel].astype(np.int64)[:, None]
        tk = key_meta[None, :, 0]
        kk = key_meta[None, :, 1]
        if mode == "global":
            variant = self.cfg.causality
            if variant == "prefix_scales":
                ok = (tk <= tq) & (kk <= kq)
            elif variant == "all_scales":
                ok = (tk < tq) | ((tk == tq) & (kk <= kq))
            else:  # same_scale
                ok = ((tk < tq) & (kk == kq)) | ((tk == tq) & (kk <= kq))
        elif mode == "cross_view":
            ok = (tk == tq) & (kk <= kq)
        else:  # cross_frame: same pixel track, causal in time
            trk_q = lay.track_id[q_sel].astype(np.int64)[:, None]
            ok = (key_meta[None, :, 2] == trk_q) & (tk <= tq)
        m = np.zeros(ok.shape, dtype=np.float32)
        m[~ok] = NEG
        return m

    # -- chunk forward ------------------------------------------------------

    def process_steps(self, k_lo: int, k_hi: int, inputs: np.ndarray,
                      start_mask: np.ndarray) -> Tensor:
        """Forward scale steps k_lo..k_hi (inclusive) of the current frame.

        `inputs`/`start_mask` cover exactly those tokens in layout order.
        Returns logits (1, n_chunk, bits) and stores the chunk's latents.
        """
        if k_lo != self.next_k:
            raise CacheIntegrityError(
                f"frame {self.t_idx}: expected next scale {self.next_k}, got {k_lo}")
        if k_hi >= self.cfg.sched.num_scales:
            raise CacheIntegrityError(f"scale {k_hi} out of range")
        lay = self.layout
        sel = np.where((lay.k_idx >= k_lo) & (lay.k_idx <= k_hi))[0]
        model = self.model
        with (nullcontext() if self.grad else no_grad()):
            x = _embed_chunk(model, inputs, start_mask, lay, sel)
            axial_q = lay.axial_angles[sel]
            use_rot = self.cfg.pos_variant == "relative_ray"
            for li, blk in enumerate(model.blocks):
                h = blk.ln_img(x)
                key_sel, kv = self._gather_img_keys(li, sel, h)
                x = x + blk.attn_img(h, kv, self._img_mask(sel, key_sel),
                                     axial_q, lay.axial_angles[key_sel])
                self.img_store[li].append((sel, h))
                if self.cfg.st_variant != "none":
                    h = blk.ln_st(x)
                    kv, angles_k, meta = self._gather_st_keys(li, sel, h)
                    mode = "global" if self.cfg.st_variant == "global" else "cross_view"
                    x = x + blk.attn_st(
                        h, kv, self._st_mask(sel, meta, mode),
                        lay.ray_rot_angles[sel] if use_rot else None,
                        angles_k if use_rot else None)
                    self.st_store[li].append((sel, h))
                    if self.cfg.st_variant == "decoupled":
                        h2 = blk.ln_st2(x)
                        kv2, angles_k2, meta2 = self._gather_st_keys(
                            li, sel, h2, second=True)
                        x = x + blk.attn_st2(
                            h2, kv2, self._st_mask(sel, meta2, "cross_frame"),
                            lay.ray_rot_angles[sel] if use_rot else None,
                            angles_k2 if use_rot else None)
                        self.st2_store[li].append((sel, h2))
                if self.conds is not None and self.conds.total > 0:
                    hc = blk.ln_cond(x)
                    cmask = self.conds.mask(lay)[:, :, sel, :]
                    x = x + blk.attn_cond(hc, self.conds.features, cmask,
                                          axial_q, self.conds.angles(self.cfg))
                x = x + blk.mlp(blk.ln_mlp(x))
            logits = model.logits_from_latents(x)
        self.next_k = k_hi + 1
        return logits

    # -- frame finalization -------------------------------------------------

    def frame_buckets(self) -> dict[int, StBucket]:
        """Collect the frame's spatio-temporal latents as detached cache
        buckets, one per scale step."""
        if self.next_k != self.cfg.sched.num_scales:
            raise CacheIntegrityError(
                f"frame {self.t_idx} finalized after scale {self.next_k - 1} "
                f"of {self.cfg.sched.num_scales - 1}")
        lay = self.layout
        store = self.st_store if self.cfg.st_variant != "none" else self.img_store

        def collect(st, sel):
            lats = []
            for li in range(self.cfg.layers):
                rows = []
                for s, l in st[li]:
                    pos = np.nonzero(np.isin(s, sel))[0]
                    if len(pos):
                        rows.append(l.data[0][pos])
                lats.append(np.concatenate(rows).astype(np.float32))
            return lats

        buckets: dict[int, StBucket] = {}
        for k in range(self.cfg.sched.num_scales):
            sel = np.where(lay.k_idx == k)[0]
            lats2 = collect(self.st2_store, sel) \
                if self.cfg.st_variant == "decoupled" else None
            buckets[k] = StBucket(t_idx=self.t_idx, k=k,
                                  latents=collect(store, sel),
                                  ray_angles=lay.ray_rot_angles[sel],
                                  track_id=lay.track_id[sel],
                                  latents2=lats2)
        return buckets


# --------------------------------------------------------------------------
# high-level generation


def _step_inputs_for(frame_tokens: list[list[np.ndarray]], lay: SequenceLayout,
                     k: int) -> tuple[np.ndarray, np.ndarray]:
    """Autoregressive inputs for scale step k from the frame's scales < k."""
    sched = lay.sched
    c = sched.bits
    hk, wk = sched.final_grid
    sel = np.where(lay.k_idx == k)[0]
    inputs = np.zeros((len(sel), c), dtype=np.float32)
    start = np.zeros(len(sel), dtype=bool)
    if k == 0:
        start[:] = True
        return inputs, start
    h, w = sched.grids[k]
    for v in range(lay.num_views):
        acc = np.zeros((hk, wk, c), dtype=np.float32)
        for kp in range(k):
            hp, wp = sched.grids[kp]
            up_h, up_w = bilinear_matrix(hk, hp), bilinear_matrix(wk, wp)
            tok = frame_tokens[v][kp].astype(np.float32)
            acc += np.tensordot(up_h, np.tensordot(up_w, tok, axes=(1, 1))
                                .transpose(1, 0, 2), axes=(1, 0))
        mh, mw = area_matrix(h, hk), area_matrix(w, wk)
        feat = np.tensordot(mh, np.tensordot(mw, acc, axes=(1, 1))
                            .transpose(1, 0, 2), axes=(1, 0))
        inputs[lay.v_idx[sel] == v] = feat.reshape(h * w, c)
    return inputs, start


def generate_step(proc: FrameProcessor, k: int,
                  frame_tokens: list[list[np.ndarray]], sampler: SamplerConfig,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """Sample scale step k for all views given the frame's coarser tokens."""
    lay = proc.layout
    sched = proc.cfg.sched
    inputs, start = _step_inputs_for(frame_tokens, lay, k)
    logits = proc.process_steps(k, k, inputs, start)
    bits = sample_bits(logits.data[0], sampler, rng)
    h, w = sched.grids[k]
    sel = lay.k_idx == k
    return [bits[lay.v_idx[sel] == v].reshape(h, w, sched.bits)
            for v in range(lay.num_views)]


def tokenize_views(tok_net: TokenizerNet, images: list[np.ndarray]
                   ) -> list[list[np.ndarray]]:
    """Per-view multiscale tokens from per-view (H, W, 3) images."""
    out = []
    with no_grad():
        for img in images:
            toks = encode_multiscale(
                Tensor(np.asarray(img, dtype=np.float32)[None]), tok_net)
            out.append([t.data[0] for t in toks])
    return out


def ingest_frame(model: WorldModel, cache: RecurrentCache, t_idx: int,
                 poses: list[CameraPose], time_s: float,
                 frame_tokens: list[list[np.ndarray]],
                 conds: dict[int, ConditionSet] | None = None) -> FrameProcessor:
    """Teacher-forced pass over a known frame, caching its latents."""
    proc = FrameProcessor(model, cache, t_idx, poses, time_s, conds)
    inputs, start = build_step_inputs([frame_tokens], proc.layout)
    proc.process_steps(0, model.cfg.sched.num_scales - 1, inputs, start)
    cache.append_frame(t_idx, proc.frame_buckets())
    return proc


def _frame_conditions(model: WorldModel, fp: FramePlan
                      ) -> dict[int, ConditionSet] | None:
    if not (fp.boxes or fp.lanes or fp.caption):
        return None
    enc = model.condition_encoder
    with no_grad():
        return {v: enc.encode_image_conditions(pose, fp.caption, fp.boxes, fp.lanes)
                for v, pose in enumerate(fp.poses)}


@dataclass
class GenerationResult:
    tokens: list[list[list[np.ndarray]]]   # [frame][view][scale]
    images: list[list[np.ndarray]]         # [frame][view] decoded (H, W, 3)
    cache: RecurrentCache


def generate_video(model: WorldModel, tok_net: TokenizerNet, plan: RolloutPlan,
                   context: list[list[np.ndarray]] | None = None,
                   context_times: list[float] | None = None,
                   context_poses: list[list[CameraPose]] | None = None,
                   cache_capacity: int = 4,
                   sampler: SamplerConfig = SamplerConfig(),
                   encode_conditions: bool = True) -> GenerationResult:
    """Frame-by-frame rollout following `plan`.

    Optional `context` frames (per-view images) are tokenized and fed as a
    ground-truth prefix; they need matching `context_times`/`context_poses`,
    and plan times must continue after the last context time.
    """
    if not plan.frames:
        raise ValueError("empty rollout plan")
    sched = model.cfg.sched
    cache = RecurrentCache(cache_capacity, sched.num_scales)
    rng = np.random.default_rng(sampler.seed)
    all_tokens: list[list[list[np.ndarray]]] = []
    images_out: list[list[np.ndarray]] = []
    t_idx = 0
    if context:
        if context_times is None or context_poses is None:
            raise ValueError("context frames need context_times and context_poses")
        for imgs, time_s, poses in zip(context, context_times, context_poses):
            ingest_frame(model, cache, t_idx, poses, time_s,
                         tokenize_views(tok_net, imgs))
            t_idx += 1
    for fp in plan.frames:
        conds = _frame_conditions(model, fp) if encode_conditions else None
        proc = FrameProcessor(model, cache, t_idx, fp.poses, fp.time_s, conds)
        frame_tokens: list[list[np.ndarray]] = [[] for _ in range(len(fp.poses))]
        for k in range(sched.num_scales):
            step_tokens = generate_step(proc, k, frame_tokens, sampler, rng)
            for v in range(len(fp.poses)):
                frame_tokens[v].append(step_tokens[v])
        cache.append_frame(t_idx, proc.frame_buckets())
        all_tokens.append(frame_tokens)
        with no_grad():
            imgs = [decode_from_scales(
                [Tensor(tk[None]) for tk in frame_tokens[v]], tok_net).data[0]
                for v in range(len(fp.poses))]
        images_out.append(imgs)
        t_idx += 1
    return GenerationResult(tokens=all_tokens, images=images_out, cache=cache)
