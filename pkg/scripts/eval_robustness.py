#!/usr/bin/env python3
"""Robustness studies: bitwise error injection during training, novel-view
camera shifts at inference, and zero-shot transfer to a larger camera rig.
"""

import argparse

import numpy as np

from rayworld.experiments import (fit_tokenizer, next_frame_psnr,
                                  novel_view_psnr, paired_greater_p,
                                  pool_clips, rig_transfer_psnr,
                                  rollout_psnr_curves, scene_pool,
                                  train_world_model)
from rayworld.toyworld import RigSpec, random_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--tok-steps", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rig = RigSpec()
    print("training tokenizer ...")
    tok = fit_tokenizer(rig, steps=args.tok_steps, seed=args.seed)
    train_pool = scene_pool(2 * args.scenes, seed=args.seed)
    pool = scene_pool(args.scenes, seed=args.seed + 1000)  # held-out eval
    clips = pool_clips(train_pool, rig, tok)

    print("training with and without input bit errors ...")
    noisy = train_world_model(tok, clips, error_rate=0.05,
                              steps=args.steps, seed=args.seed)
    clean = train_world_model(tok, clips, error_rate=0.0,
                              steps=args.steps, seed=args.seed)
    cn = rollout_psnr_curves(noisy, tok, pool, rig, n_frames=8)
    cc = rollout_psnr_curves(clean, tok, pool, rig, n_frames=8)
    p = paired_greater_p(cn[:, -1], cc[:, -1])
    print(f"8-frame rollout PSNR: err 0.05 {cn[:, -1].mean():.2f} dB, "
          f"err 0 {cc[:, -1].mean():.2f} dB, paired p={p:.4f}")

    print("novel-view shifts ...")
    for shift in (0.25, 0.5, 1.0):
        vals = novel_view_psnr(noisy, tok, pool, rig, shift)
        print(f"  lateral shift {shift}: {np.mean(vals):.2f} dB")
    base = next_frame_psnr(noisy, tok, pool, rig)
    print(f"  on-trajectory: {np.mean(base):.2f} dB")

    print("rig transfer (2 -> 3 cameras, static scenes) ...")
    statics = [random_scene(5000 + i, dynamic=False)
               for i in range(min(args.scenes, 8))]
    rig3 = RigSpec(cam_yaws=(-0.6, 0.0, 0.6))
    v2 = rig_transfer_psnr(noisy, tok, statics, rig)
    v3 = rig_transfer_psnr(noisy, tok, statics, rig3)
    print(f"  V=2 {np.mean(v2):.2f} dB, V=3 zero-shot {np.mean(v3):.2f} dB")


if __name__ == "__main__":
    main()
