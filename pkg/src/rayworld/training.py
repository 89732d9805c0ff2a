"""Training loops: teacher-forced clip training, recurrent long-horizon
training with per-frame gradient accumulation over a sliding latent cache,
bitwise error injection on inputs, and a staged schedule.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .conditioning import ConditionSet
from .core import AdamW, Tensor
from .engine import FrameProcessor, RecurrentCache, inject_bitwise_errors
from .geometry import CameraPose
from .model import (ModelConfig, SequenceLayout, WorldModel, batch_conditions,
                    build_layout, build_step_inputs, forward_teacher_forced)
from .tokenizer import TokenizerNet
from .toyworld import (EgoTrajectory, RigSpec, SceneSpec, annotate_frame,
                       render_frame)


class TrainConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Staged schedule: short clips first, then an optional higher-resolution
    clip stage, then long-horizon recurrent training at a reduced rate."""
    stage1_steps: int = 300
    stage2_steps: int = 0
    stage3_steps: int = 50
    lr1: float = 5e-4
    lr2: float = 2.5e-4
    lr3: float = 2.5e-5
    weight_decay: float = 0.01
    clip_frames: int = 4
    recurrent_frames: int = 20
    cache_capacity: int = 4
    error_rate: float = 0.05
    batch_size: int = 2
    use_conditions: bool = True
    seed: int = 0
    log_every: int = 25

    def __post_init__(self):
        if min(self.stage1_steps, self.stage2_steps, self.stage3_steps) < 0:
            raise TrainConfigError("stage step counts must be non-negative")
        if not (0.0 <= self.error_rate <= 1.0):
            raise TrainConfigError(f"error_rate {self.error_rate} outside [0,1]")
        if self.clip_frames < 1 or self.recurrent_frames < 1:
            raise TrainConfigError("frame counts must be positive")

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1)

    @staticmethod
    def load(path: str) -> "TrainConfig":
        with open(path) as fh:
            return TrainConfig(**json.load(fh))


@dataclass
class TrainStats:
    step: int
    loss: float
    bit_accuracy: float
    grad_norm: float
    seconds: float


def write_stats_csv(path: str, rows: list[TrainStats]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "bit_accuracy", "grad_norm", "seconds"])
        for r in rows:
            w.writerow([r.step, f"{r.loss:.6f}", f"{r.bit_accuracy:.6f}",
                        f"{r.grad_norm:.6f}", f"{r.seconds:.3f}"])


# --------------------------------------------------------------------------
# losses


def bit_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy for {-1,+1} targets against raw logits
    (softplus(-t*z); ln 2 at a zero logit)."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise TrainConfigError(f"target shape {t.shape} != logits {logits.shape}")
    return (logits * Tensor(-t)).softplus().mean()


def bit_accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float((np.sign(logits) == np.sign(targets)).mean())


# --------------------------------------------------------------------------
# clip data


@dataclass
class ClipData:
    """One training sequence: per-frame times, per-view poses, multiscale
    bit tokens, and raw annotations for the condition encoder."""
    times: list[float]
    poses: list[list[CameraPose]]            # [t][v]
    tokens: list[list[list[np.ndarray]]]     # [t][v][k]
    boxes: list[list[dict]] = field(default_factory=list)    # [t]
    lanes: list[list[dict]] = field(default_factory=list)
    caption: str = ""

    @property
    def num_frames(self) -> int:
        return len(self.times)

    def frame_prefix(self, n: int) -> "ClipData":
        return ClipData(self.times[:n], self.poses[:n], self.tokens[:n],
                        self.boxes[:n], self.lanes[:n], self.caption)


def render_clip(scene: SceneSpec, rig: RigSpec, traj: EgoTrajectory,
                times: list[float], tok_net: TokenizerNet,
                with_annotations: bool = True) -> ClipData:
    """Render, tokenize, and annotate a clip of the procedural world."""
    from .engine import tokenize_views
    poses, tokens, boxes, lanes = [], [], [], []
    caption = ""
    for t in times:
        imgs, frame_poses = render_frame(scene, rig, traj, t)
        poses.append(frame_poses)
        tokens.append(tokenize_views(tok_net, imgs))
        if with_annotations:
            b, ln, caption = annotate_frame(scene, t)
            boxes.append(b)
            lanes.append(ln)
        else:
            boxes.append([])
            lanes.append([])
    return ClipData(times, poses, tokens, boxes, lanes, caption)


def encode_clip_conditions(model: WorldModel, clip: ClipData
                           ) -> dict[tuple[int, int], ConditionSet]:
    """Per-(frame, view) condition sets; gradient flows to the encoder."""
    out = {}
    for t, frame_poses in enumerate(clip.poses):
        boxes = clip.boxes[t] if t < len(clip.boxes) else []
        lanes = clip.lanes[t] if t < len(clip.lanes) else []
        for v, pose in enumerate(frame_poses):
            cs = model.condition_encoder.encode_image_conditions(
                pose, clip.caption, boxes, lanes)
            if len(cs):
                out[(t, v)] = cs
    return out


def clip_targets(clip: ClipData, layout: SequenceLayout) -> np.ndarray:
    """Clean bit targets in layout token order, (N, bits)."""
    n = layout.num_tokens
    c = layout.sched.bits
    out = np.zeros((n, c), dtype=np.float32)
    for t, frame in enumerate(clip.tokens):
        for v, per_scale in enumerate(frame):
            for k, tok in enumerate(per_scale):
                sel = (layout.t_idx == t) & (layout.v_idx == v) & (layout.k_idx == k)
                out[sel] = tok.reshape(-1, c)
    return out


def clip_layout(clip: ClipData, cfg: ModelConfig) -> SequenceLayout:
    return build_layout(cfg.sched, clip.poses, clip.times, cfg)


# --------------------------------------------------------------------------
# training steps


def clip_train_step(model: WorldModel, opt: AdamW, clips: list[ClipData],
                    error_rate: float, rng: np.random.Generator,
                    use_conditions: bool = True,
                    layouts: list[SequenceLayout] | None = None) -> TrainStats:
    """One teacher-forced update on a batch of equally-shaped clips. Inputs
    are error-injected; targets stay clean."""
    t0 = time.time()
    if layouts is None:
        layouts = [clip_layout(c, model.cfg) for c in clips]
    corrupted = [inject_bitwise_errors(c.tokens, error_rate,
                                       int(rng.integers(1 << 31)))
                 for c in clips]
    conds = None
    if use_conditions:
        sets = [encode_clip_conditions(model, c) for c in clips]
        conds = batch_conditions(sets, layouts[0].num_views, model.cfg.width)
    logits, _ = forward_teacher_forced(model, corrupted, layouts, conds)
    targets = np.stack([clip_targets(c, lay) for c, lay in zip(clips, layouts)])
    loss = bit_cross_entropy(logits, targets)
    opt.zero_grad()
    loss.backward()
    gn = opt.grad_norm()
    opt.step()
    return TrainStats(step=opt.step_count, loss=float(loss.data),
                      bit_accuracy=bit_accuracy(logits.data, targets),
                      grad_norm=gn, seconds=time.time() - t0)


def recurrent_frame_losses(model: WorldModel, clip: ClipData,
                           cache_capacity: int, error_rate: float,
                           rng: np.random.Generator,
                           use_conditions: bool = True,
                           backward_each: bool = True
                           ) -> tuple[list[Tensor], float, RecurrentCache]:
    """Frame-by-frame forward through a sliding latent cache.

    Each frame attends cached (gradient-detached) latents of up to
    `cache_capacity` previous frames, its inputs carry injected bit errors,
    and its mean loss is scaled by 1/T. With `backward_each` the scaled loss
    is backpropagated immediately so frame graphs are freed as training
    walks the sequence; gradients accumulate in the parameters either way.
    """
    sched = model.cfg.sched
    cache = RecurrentCache(cache_capacity, sched.num_scales)
    T = clip.num_frames
    losses: list[Tensor] = []
    acc_bits = 0.0
    for t in range(T):
        conds = None
        if use_conditions:
            full = encode_clip_conditions(model, clip.frame_prefix(t + 1))
            conds = {v: cs for (tt, v), cs in full.items() if tt == t} or None
        proc = FrameProcessor(model, cache, t, clip.poses[t], clip.times[t],
                              conds, grad=True)
        frame_tokens = clip.tokens[t]
        corrupted = inject_bitwise_errors(frame_tokens, error_rate,
                                          int(rng.integers(1 << 31)))
        inputs, start = build_step_inputs([corrupted], proc.layout)
        logits = proc.process_steps(0, sched.num_scales - 1, inputs, start)
        target = np.stack([clip_targets(
            ClipData([clip.times[t]], [clip.poses[t]], [frame_tokens]),
            proc.layout)])
        loss_t = bit_cross_entropy(logits, target) * (1.0 / T)
        acc_bits += bit_accuracy(logits.data, target) / T
        if backward_each:
            loss_t.backward()
        losses.append(loss_t)
        cache.append_frame(t, proc.frame_buckets())
    return losses, acc_bits, cache


def recurrent_train_step(model: WorldModel, opt: AdamW, clip: ClipData,
                         cache_capacity: int, error_rate: float,
                         rng: np.random.Generator,
                         use_conditions: bool = True) -> TrainStats:
    """One update over a long sequence: per-frame backward accumulation,
    single optimizer step at the end."""
    t0 = time.time()
    opt.zero_grad()
    losses, acc, _ = recurrent_frame_losses(
        model, clip, cache_capacity, error_rate, rng,
        use_conditions=use_conditions, backward_each=True)
    gn = opt.grad_norm()
    opt.step()
    total = float(sum(l.data for l in losses))
    return TrainStats(step=opt.step_count, loss=total, bit_accuracy=acc,
                      grad_norm=gn, seconds=time.time() - t0)


# --------------------------------------------------------------------------
# staged schedule


def train_model(model: WorldModel, clips: list[ClipData], cfg: TrainConfig,
                long_clips: list[ClipData] | None = None,
                stage2_clips: list[ClipData] | None = None,
                stats_path: str | None = None,
                checkpoint_fn=None) -> list[TrainStats]:
    """Run the staged schedule over pre-tokenized clips.

    Stage 1: short-clip teacher forcing at lr1. Stage 2 (optional): same
    procedure on `stage2_clips` (e.g. a higher resolution) at lr2. Stage 3:
    recurrent training on `long_clips` at lr3. `checkpoint_fn(tag)` is called
    after each stage when given.
    """
    rng = np.random.default_rng(cfg.seed)
    stats: list[TrainStats] = []

    def run_clip_stage(stage_clips, steps, lr, tag):
        if steps == 0 or not stage_clips:
            return
        opt = AdamW(model.named_parameters(), lr=lr,
                    weight_decay=cfg.weight_decay)
        layout_cache: dict[int, SequenceLayout] = {}
        for _ in range(steps):
            idx = rng.choice(len(stage_clips),
                             size=min(cfg.batch_size, len(stage_clips)),
                             replace=False)
            batch = [stage_clips[i] for i in idx]
            lays = []
            for i in idx:
                if i not in layout_cache:
                    layout_cache[i] = clip_layout(stage_clips[i], model.cfg)
                lays.append(layout_cache[i])
            s = clip_train_step(model, opt, batch, cfg.error_rate, rng,
                                use_conditions=cfg.use_conditions, layouts=lays)
            stats.append(s)
            if cfg.log_every and s.step % cfg.log_every == 0:
                print(f"[{tag}] step {s.step} loss {s.loss:.4f} "
                      f"acc {s.bit_accuracy:.4f}")
        if checkpoint_fn:
            checkpoint_fn(tag)

    run_clip_stage(clips, cfg.stage1_steps, cfg.lr1, "stage1")
    run_clip_stage(stage2_clips, cfg.stage2_steps, cfg.lr2, "stage2")

    if cfg.stage3_steps and long_clips:
        opt = AdamW(model.named_parameters(), lr=cfg.lr3,
                    weight_decay=cfg.weight_decay)
        for _ in range(cfg.stage3_steps):
            clip = long_clips[int(rng.integers(len(long_clips)))]
            s = recurrent_train_step(model, opt, clip, cfg.cache_capacity,
                                     cfg.error_rate, rng,
                                     use_conditions=cfg.use_conditions)
            stats.append(s)
            if cfg.log_every and s.step % max(1, cfg.log_every // 5) == 0:
                print(f"[stage3] step {s.step} loss {s.loss:.4f} "
                      f"acc {s.bit_accuracy:.4f}")
        if checkpoint_fn:
            checkpoint_fn("stage3")

    if stats_path:
        write_stats_csv(stats_path, stats)
    return stats
