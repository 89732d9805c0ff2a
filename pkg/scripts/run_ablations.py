#!/usr/bin/env python3
"""Compare dual-causal attention variants and spatio-temporal attention
scopes on next-frame prediction and cross-view consistency.

Trains one compact model per setting on a shared scene pool, then evaluates
on a disjoint held-out pool: next-frame PSNR per scene with paired one-sided
t-tests for the causality variants, and cross-view consistency PSNR under
stochastic bit sampling for the spatio-temporal variants (argmax decoding
collapses every variant to per-view blur that trivially agrees across
views, so sampling is what makes the comparison discriminative).
"""

import argparse

import numpy as np

from rayworld.engine import SamplerConfig
from rayworld.experiments import (cross_view_scores, fit_tokenizer,
                                  next_frame_psnr, paired_greater_p,
                                  pool_clips, scene_pool, train_world_model)
from rayworld.toyworld import RigSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--steps", type=int, default=800)
    ap.add_argument("--st-steps", type=int, default=1200)
    ap.add_argument("--tok-steps", type=int, default=3000)
    ap.add_argument("--dt", type=float, default=0.8,
                    help="frame spacing for the causality comparison; large "
                         "enough that dynamics dominate the next frame")
    ap.add_argument("--temperature", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rig = RigSpec()
    print("training tokenizer ...")
    tok = fit_tokenizer(rig, steps=args.tok_steps, seed=args.seed)
    train_pool = scene_pool(2 * args.scenes, seed=args.seed)
    eval_pool = scene_pool(args.scenes, seed=args.seed + 1000)

    clips = pool_clips(train_pool, rig, tok, dt=args.dt)
    results = {}
    for causality in ("prefix_scales", "all_scales", "same_scale"):
        print(f"training causality={causality} ...")
        model = train_world_model(tok, clips, causality=causality,
                                  steps=args.steps, seed=args.seed)
        results[causality] = next_frame_psnr(model, tok, eval_pool, rig,
                                             dt=args.dt)
        print(f"  next-frame PSNR {np.mean(results[causality]):.2f} dB")

    for other in ("all_scales", "same_scale"):
        p = paired_greater_p(results["prefix_scales"], results[other])
        print(f"prefix_scales > {other}: "
              f"{np.mean(results['prefix_scales']):.2f} vs "
              f"{np.mean(results[other]):.2f} dB, paired p={p:.4f}")

    clips = pool_clips(train_pool, rig, tok)
    turning = [p for p in eval_pool if p.traj_name == "turning"]
    sampler = SamplerConfig(mode="bernoulli", temperature=args.temperature,
                            seed=args.seed)
    for st in ("global", "decoupled", "none"):
        print(f"training st_variant={st} ...")
        model = train_world_model(tok, clips, st_variant=st,
                                  steps=args.st_steps, seed=args.seed)
        s = cross_view_scores(model, tok, turning, rig, sampler=sampler)
        vals = [x for x in s if x is not None]
        print(f"  cross-view PSNR on {len(vals)} turning scenes: "
              f"{np.mean(vals):.2f} dB")


if __name__ == "__main__":
    main()
