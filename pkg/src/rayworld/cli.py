"""Command-line driver: dataset generation, training, rollouts, novel-view
generation, mask dumps, evaluation, and benchmarking.

All subcommands are deterministic for a fixed --seed (outputs byte-identical
across runs). Exit codes: 0 success, 2 bad flags/usage, 3 corrupt or
unreadable checkpoint.

The RAYNOVA_THREADS environment variable caps worker parallelism for
evaluation; the default of 1 keeps runs fully deterministic.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .engine import (FramePlan, RolloutPlan, SamplerConfig, generate_video,
                     plan_camera_shift, save_plan)
from .metrics import (MetricError, cross_view_psnr, metric_box_color_iou,
                      metric_drift_curve, sequence_psnr, token_bit_accuracy)
from .model import (CAUSALITY_VARIANTS, POS_VARIANTS, ST_VARIANTS, ModelConfig,
                    WorldModel, dual_causal_step_mask)
from .tokenizer import ScaleSchedule, TokenizerNet, train_tokenizer
from .toyworld import (RigSpec, annotate_frame, build_dataset,
                       default_trajectories, random_scene, render_frame,
                       render_view, write_ppm)
from .training import TrainConfig, render_clip, train_model, write_stats_csv

EXIT_BAD_FLAGS = 2
EXIT_BAD_CHECKPOINT = 3


def worker_count() -> int:
    """Parallelism cap from RAYNOVA_THREADS (default 1 = deterministic)."""
    try:
        return max(1, int(os.environ.get("RAYNOVA_THREADS", "1")))
    except ValueError:
        return 1


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_FLAGS):
        super().__init__(message)
        self.code = code


def _parse_shift(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(f"--shift expects X,Y,Z, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise CliError(f"--shift expects numbers: {e}") from e


def _load_ckpt(path: str | None):
    if not path:
        raise CliError("--checkpoint is required for this command")
    if not os.path.exists(path):
        raise CliError(f"checkpoint {path} does not exist")
    try:
        return load_checkpoint(path)
    except CheckpointError as e:
        raise CliError(str(e), code=EXIT_BAD_CHECKPOINT) from e


def _out_dir(args) -> str:
    if not args.out:
        raise CliError("--out is required for this command")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _scene_setup(seed: int, num_views: int = 2, image_size: int = 16,
                 turning: bool = False):
    yaws = tuple(np.linspace(-0.3, 0.3, num_views)) if num_views > 1 else (0.0,)
    rig = RigSpec(cam_yaws=yaws, image_w=image_size, image_h=image_size)
    traj = default_trajectories()["turning" if turning else "straight"]
    scene = random_scene(seed)
    return scene, rig, traj


def _rollout_plan(scene, rig, traj, times, with_annotations: bool = True
                  ) -> RolloutPlan:
    frames = []
    for t in times:
        xy, yaw = traj.pose_at(t)
        poses = [rig.camera_pose(xy, yaw, v) for v in range(rig.num_views)]
        if with_annotations:
            boxes, lanes, caption = annotate_frame(scene, t)
        else:
            boxes, lanes, caption = [], [], ""
        frames.append(FramePlan(t, poses, boxes, lanes, caption))
    return RolloutPlan(frames)


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    ids = build_dataset(out, n_scenes=args.scenes, seed=args.seed,
                        frames_per_scene=args.frames or 8,
                        image_size=args.size)
    print(f"wrote {len(ids)} scenes to {out}")
    return 0


def _experiment_config(args) -> tuple[ModelConfig, TrainConfig, dict]:
    doc = {}
    if args.config:
        if not os.path.exists(args.config):
            raise CliError(f"config {args.config} does not exist")
        with open(args.config) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise CliError(f"config {args.config}: invalid JSON: {e}") from e
    sched = ScaleSchedule.from_dict(doc["sched"]) if "sched" in doc \
        else ScaleSchedule()
    mdoc = dict(doc.get("model", {}))
    mdoc.setdefault("seed", args.seed)
    if args.variant:
        mdoc["causality"] = args.variant
    if args.st:
        mdoc["st_variant"] = args.st
    if args.pos:
        mdoc["pos_variant"] = args.pos
    mdoc["sched"] = sched.to_dict()
    mdoc.setdefault("rope", {})
    model_cfg = ModelConfig.from_dict(mdoc)
    tdoc = dict(doc.get("train", {}))
    tdoc.setdefault("seed", args.seed)
    train_cfg = TrainConfig(**tdoc)
    return model_cfg, train_cfg, doc


def cmd_train(args) -> int:
    out = _out_dir(args)
    model_cfg, train_cfg, doc = _experiment_config(args)
    rng = np.random.default_rng(args.seed)
    n_scenes = int(doc.get("data", {}).get("scenes", 6))
    image_size = model_cfg.sched.image_size()[0]
    tok_hidden = int(doc.get("tokenizer", {}).get("hidden", 64))
    tok_steps = int(doc.get("tokenizer", {}).get("steps", 400))

    scenes = []
    for i in range(n_scenes):
        scene, rig, traj = _scene_setup(args.seed * 1009 + i,
                                        image_size=image_size,
                                        turning=(i % 2 == 1))
        scenes.append((scene, rig, traj))

    tok_net = TokenizerNet(model_cfg.sched, hidden=tok_hidden, seed=args.seed)
    if tok_steps:
        images = []
        for scene, rig, traj in scenes:
            for t in (0.0, 1.0):
                images.extend(render_frame(scene, rig, traj, t)[0])
        train_tokenizer(tok_net, np.stack(images), steps=tok_steps,
                        seed=args.seed)

    clips, long_clips = [], []
    for scene, rig, traj in scenes:
        t0 = float(rng.uniform(0, 2))
        times = [t0 + 0.4 * i for i in range(train_cfg.clip_frames)]
        clips.append(render_clip(scene, rig, traj, times, tok_net))
        if train_cfg.stage3_steps:
            times_l = [0.3 * i for i in range(train_cfg.recurrent_frames)]
            long_clips.append(render_clip(scene, rig, traj, times_l, tok_net))

    model = WorldModel(model_cfg)
    stats = train_model(model, clips, train_cfg, long_clips=long_clips)
    for s in stats:
        s.seconds = 0.0  # keep the stats file byte-deterministic
    write_stats_csv(os.path.join(out, "train_stats.csv"), stats)
    save_checkpoint(os.path.join(out, "model.ckpt"), model, tok_net,
                    extra={"train": json.loads(json.dumps(vars(train_cfg)))})
    print(f"trained {len(stats)} steps; checkpoint at {out}/model.ckpt")
    return 0


def _write_frames(out: str, tag: str, frames: list[list[np.ndarray]]):
    lines = []
    for t, views in enumerate(frames):
        for v, img in enumerate(views):
            name = f"{tag}_f{t:03d}_v{v}.ppm"
            write_ppm(os.path.join(out, name), img)
            lines.append(name)
    with open(os.path.join(out, f"{tag}_index"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_rollout(args) -> int:
    out = _out_dir(args)
    model, tok_net, _ = _load_ckpt(args.checkpoint)
    scene, rig, traj = _scene_setup(args.seed,
                                    image_size=model.cfg.sched.image_size()[0])
    n = args.frames or 8
    n_ctx = 2
    times = [0.4 * i for i in range(n_ctx + n)]
    context, context_poses = [], []
    for t in times[:n_ctx]:
        imgs, poses = render_frame(scene, rig, traj, t)
        context.append(imgs)
        context_poses.append(poses)
    plan = _rollout_plan(scene, rig, traj, times[n_ctx:])
    res = generate_video(model, tok_net, plan, context=context,
                         context_times=times[:n_ctx],
                         context_poses=context_poses,
                         cache_capacity=args.cache,
                         sampler=SamplerConfig(seed=args.seed))
    _write_frames(out, "gen", res.images)
    gt = [render_frame(scene, rig, traj, t)[0] for t in times[n_ctx:]]
    _write_frames(out, "gt", gt)
    curve = metric_drift_curve(res.images, gt)
    with open(os.path.join(out, "psnr.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "psnr_db"])
        for i, p in enumerate(curve.psnr_per_frame):
            w.writerow([i, f"{p:.4f}"])
    save_plan(plan, os.path.join(out, "plan.json"))
    print(f"rollout of {n} frames written to {out} "
          f"(last-frame PSNR {curve.last:.2f} dB)")
    return 0


def cmd_nvs(args) -> int:
    out = _out_dir(args)
    model, tok_net, _ = _load_ckpt(args.checkpoint)
    shift = _parse_shift(args.shift) if args.shift else np.zeros(3)
    scene, rig, traj = _scene_setup(args.seed,
                                    image_size=model.cfg.sched.image_size()[0])
    n = args.frames or 4
    n_ctx = 2
    times = [0.4 * i for i in range(n_ctx + n)]
    context, context_poses = [], []
    for t in times[:n_ctx]:
        imgs, poses = render_frame(scene, rig, traj, t)
        context.append(imgs)
        context_poses.append(poses)
    plan = plan_camera_shift(
        _rollout_plan(scene, rig, traj, times[n_ctx:]), shift)
    res = generate_video(model, tok_net, plan, context=context,
                         context_times=times[:n_ctx],
                         context_poses=context_poses,
                         cache_capacity=args.cache,
                         sampler=SamplerConfig(seed=args.seed))
    _write_frames(out, "gen", res.images)
    gt = [[render_view(scene, p, fp.time_s) for p in fp.poses]
          for fp in plan.frames]
    _write_frames(out, "gt", gt)
    vals = sequence_psnr(res.images, gt)
    with open(os.path.join(out, "nvs_psnr.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "psnr_db"])
        for i, p in enumerate(vals):
            w.writerow([i, f"{p:.4f}"])
    finite = [v for v in vals if np.isfinite(v)]
    mean = float(np.mean(finite)) if finite else float("inf")
    print(f"novel-view generation at shift {shift.tolist()}: "
          f"mean PSNR {mean:.2f} dB ({out})")
    return 0


def cmd_dump_mask(args) -> int:
    T = args.frames or 2
    K = args.scales
    variant = args.variant or "prefix_scales"
    steps = [(t, k) for t in range(T) for k in range(K)]
    allowed = dual_causal_step_mask(steps, variant)
    header = "    " + " ".join(f"t{t}k{k}" for t, k in steps)
    lines = [f"# step attention mask, variant={variant}, rows attend columns",
             header]
    for a, (t, k) in enumerate(steps):
        row = "  ".join("X " if allowed[a, b] else ". "
                        for b in range(len(steps)))
        lines.append(f"t{t}k{k} {row}")
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"mask_{variant}.txt"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    model, tok_net, _ = _load_ckpt(args.checkpoint)
    n_scenes = args.scenes
    rows = []
    for i in range(n_scenes):
        scene, rig, traj = _scene_setup(args.seed + 37 * i,
                                        image_size=model.cfg.sched.image_size()[0])
        n = args.frames or 6
        n_ctx = 2
        times = [0.4 * j for j in range(n_ctx + n)]
        context, context_poses = [], []
        for t in times[:n_ctx]:
            imgs, poses = render_frame(scene, rig, traj, t)
            context.append(imgs)
            context_poses.append(poses)
        plan = _rollout_plan(scene, rig, traj, times[n_ctx:])
        res = generate_video(model, tok_net, plan, context=context,
                             context_times=times[:n_ctx],
                             context_poses=context_poses,
                             cache_capacity=args.cache,
                             sampler=SamplerConfig(seed=args.seed))
        gt = [render_frame(scene, rig, traj, t)[0] for t in times[n_ctx:]]
        curve = metric_drift_curve(res.images, gt)
        from .engine import tokenize_views
        gt_tokens = [tokenize_views(tok_net, f) for f in gt]
        bits = token_bit_accuracy(res.tokens, gt_tokens)
        ious = []
        for fi, fp in enumerate(plan.frames):
            for b in fp.boxes:
                for v, pose in enumerate(fp.poses):
                    try:
                        ious.append(metric_box_color_iou(
                            res.images[fi][v], b, pose, b["color"],
                            time=fp.time_s))
                    except MetricError:
                        continue
        cvs = []
        if rig.num_views >= 2:
            for fi, fp in enumerate(plan.frames):
                cv = cross_view_psnr(res.images[fi][0], res.images[fi][1],
                                     fp.poses[0], fp.poses[1], scene,
                                     fp.time_s)
                if cv is not None:
                    cvs.append(cv)
        rows.append({
            "scene": i,
            "psnr_per_frame": curve.psnr_per_frame,
            "bit_accuracy": bits,
            "box_iou": float(np.mean(ious)) if ious else float("nan"),
            "cross_view_psnr": float(np.mean([c for c in cvs
                                              if np.isfinite(c)]))
            if cvs else float("nan"),
        })
    path = os.path.join(out, "metrics.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        nf = len(rows[0]["psnr_per_frame"])
        w.writerow(["scene", "bit_accuracy", "box_iou", "cross_view_psnr"]
                   + [f"psnr_f{j}" for j in range(nf)])
        for r in rows:
            w.writerow([r["scene"], f"{r['bit_accuracy']:.6f}",
                        f"{r['box_iou']:.4f}", f"{r['cross_view_psnr']:.4f}"]
                       + [f"{p:.4f}" for p in r["psnr_per_frame"]])
    print(f"metric report for {n_scenes} scenes at {path}")
    return 0


def cmd_bench(args) -> int:
    if args.checkpoint:
        model, tok_net, _ = _load_ckpt(args.checkpoint)
    else:
        sched = ScaleSchedule()
        model = WorldModel(ModelConfig(layers=2, width=64, heads=2,
                                       head_dim=32, sched=sched,
                                       seed=args.seed))
        tok_net = TokenizerNet(sched, hidden=32, seed=args.seed)
    scene, rig, traj = _scene_setup(args.seed,
                                    image_size=model.cfg.sched.image_size()[0])
    n = args.frames or 8
    plan = _rollout_plan(scene, rig, traj,
                         [0.4 * i for i in range(n)],
                         with_annotations=False)
    t0 = time.time()
    res = generate_video(model, tok_net, plan, cache_capacity=args.cache,
                         sampler=SamplerConfig(seed=args.seed))
    dt = time.time() - t0
    images = n * rig.num_views
    steps = n * model.cfg.sched.num_scales
    print(f"{images} images in {dt:.3f}s = {images / dt:.2f} images/s")
    print(f"{steps} scale steps, {1000 * dt / steps:.1f} ms/step")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rayworld",
        description="Multi-view autoregressive world model on a procedural "
                    "ray-cast toy world.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--checkpoint", help="checkpoint path")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--variant", choices=CAUSALITY_VARIANTS,
                        help="scale-causality variant")
        sp.add_argument("--st", choices=ST_VARIANTS,
                        help="spatio-temporal attention variant")
        sp.add_argument("--pos", choices=POS_VARIANTS,
                        help="ray position-encoding variant")
        sp.add_argument("--shift", help="camera shift X,Y,Z")
        sp.add_argument("--frames", type=int, help="number of frames")
        sp.add_argument("--cache", type=int, default=4,
                        help="latent cache capacity (frames)")

    sp = sub.add_parser("gen-data", help="write a procedural dataset")
    common(sp)
    sp.add_argument("--scenes", type=int, default=4)
    sp.add_argument("--size", type=int, default=16)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="tokenizer + staged model training")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("rollout", help="generate a video from context frames")
    common(sp)
    sp.set_defaults(fn=cmd_rollout)

    sp = sub.add_parser("nvs", help="novel-view generation at a camera shift")
    common(sp)
    sp.set_defaults(fn=cmd_nvs)

    sp = sub.add_parser("dump-mask", help="print the (t,k)-step mask")
    common(sp)
    sp.add_argument("--scales", type=int, default=3)
    sp.set_defaults(fn=cmd_dump_mask)

    sp = sub.add_parser("eval", help="metric report over held-out scenes")
    common(sp)
    sp.add_argument("--scenes", type=int, default=3)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench", help="generation throughput")
    common(sp)
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
