"""Incremental generation engine: latent cache bookkeeping, admissibility,
error injection, rollout plans, and sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayworld.engine import (CacheIntegrityError, FramePlan, RecurrentCache,
                             RolloutPlan, SamplerConfig, SamplerConfigError,
                             generate_video, inject_bitwise_errors, load_plan,
                             plan_camera_shift, sample_bits, save_plan)
from rayworld.model import ModelConfig, WorldModel
from rayworld.toyworld import annotate_frame, render_frame


@pytest.fixture(scope="module")
def model(sched):
    return WorldModel(ModelConfig(layers=1, width=32, heads=2, head_dim=16,
                                  sched=sched))


def _ingest(model, cache, tiny_tok, scene, rig, traj, t_idx, time_s):
    from rayworld.engine import ingest_frame, tokenize_views
    imgs, poses = render_frame(scene, rig, traj, time_s)
    ingest_frame(model, cache, t_idx, poses, time_s,
                 tokenize_views(tiny_tok, imgs))


def test_cache_eviction_keeps_last_m(model, tiny_tok, scene, rig, traj, sched):
    cache = RecurrentCache(3, sched.num_scales)
    for t in range(6):
        _ingest(model, cache, tiny_tok, scene, rig, traj, t, 0.3 * t)
    assert cache.retained_frame_indices() == [3, 4, 5]


def test_cache_rejects_out_of_order_frames(model, tiny_tok, scene, rig, traj,
                                           sched):
    cache = RecurrentCache(3, sched.num_scales)
    _ingest(model, cache, tiny_tok, scene, rig, traj, 2, 0.6)
    with pytest.raises(CacheIntegrityError):
        _ingest(model, cache, tiny_tok, scene, rig, traj, 1, 0.9)


def test_cache_rejects_incomplete_frame(sched):
    cache = RecurrentCache(2, sched.num_scales)
    with pytest.raises(CacheIntegrityError):
        cache.append_frame(0, {})


def test_admissibility_variants(model, tiny_tok, scene, rig, traj, sched):
    cache = RecurrentCache(4, sched.num_scales)
    for t in range(2):
        _ingest(model, cache, tiny_tok, scene, rig, traj, t, 0.3 * t)
    ks = list(range(sched.num_scales))
    # prefix_scales from frame 2: every cached (t, k) with k <= max queried k
    buckets = cache.admissible("prefix_scales", 2, ks)
    assert {(b.t_idx, b.k) for b in buckets} == {
        (t, k) for t in range(2) for k in ks}
    # same_scale: previous frames contribute only the queried scales
    buckets = cache.admissible("same_scale", 2, [1])
    assert {(b.t_idx, b.k) for b in buckets} == {(0, 1), (1, 1)}


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_error_injection_rate(rate, seed):
    tokens = [[np.ones((8, 8, 16), dtype=np.float32)]]
    out = inject_bitwise_errors(tokens, rate, seed)
    flipped = (out[0][0] == -1).mean()
    assert abs(flipped - rate) < 0.08
    assert np.isin(out[0][0], (-1.0, 1.0)).all()


def test_error_injection_validation():
    with pytest.raises(SamplerConfigError):
        inject_bitwise_errors([], 1.5, 0)


def test_error_injection_deterministic():
    tokens = [np.ones((4, 4, 8), dtype=np.float32)]
    a = inject_bitwise_errors(tokens, 0.3, 7)
    b = inject_bitwise_errors(tokens, 0.3, 7)
    np.testing.assert_array_equal(a[0], b[0])


def test_sampler_modes():
    logits = np.array([[3.0, -2.0, 0.5, -0.1]])
    rng = np.random.default_rng(0)
    bits = sample_bits(logits, SamplerConfig(mode="argmax"), rng)
    np.testing.assert_array_equal(bits, [[1, -1, 1, -1]])
    with pytest.raises(SamplerConfigError):
        SamplerConfig(mode="magic")
    with pytest.raises(SamplerConfigError):
        SamplerConfig(temperature=0.0)
    # bernoulli respects extreme logits
    big = np.full((1, 64), 50.0)
    bits = sample_bits(big, SamplerConfig(mode="bernoulli", seed=1), rng)
    assert (bits == 1).all()


def test_plan_round_trip(tmp_path, scene, rig, traj):
    frames = []
    for i, t in enumerate((0.0, 0.4, 0.8)):
        _, poses = render_frame(scene, rig, traj, t)
        boxes, lanes, caption = annotate_frame(scene, t)
        frames.append(FramePlan(t, poses, boxes, lanes, caption))
    plan = RolloutPlan(frames)
    path = str(tmp_path / "plan.json")
    save_plan(plan, path)
    loaded = load_plan(path)
    assert len(loaded.frames) == 3
    for a, b in zip(plan.frames, loaded.frames):
        assert a.time_s == b.time_s
        assert a.caption == b.caption
        for pa, pb in zip(a.poses, b.poses):
            np.testing.assert_allclose(pa.translation, pb.translation)
            np.testing.assert_allclose(pa.rotation, pb.rotation)


def test_plan_requires_increasing_times(scene, rig, traj):
    _, poses = render_frame(scene, rig, traj, 0.0)
    with pytest.raises(ValueError):
        RolloutPlan([FramePlan(0.4, poses), FramePlan(0.4, poses)])


def test_plan_shift_moves_cameras(scene, rig, traj):
    _, poses = render_frame(scene, rig, traj, 0.0)
    plan = RolloutPlan([FramePlan(0.0, poses)])
    shifted = plan_camera_shift(plan, (0.0, 0.5, 0.0))
    for a, b in zip(plan.frames[0].poses, shifted.frames[0].poses):
        np.testing.assert_allclose(b.translation - a.translation,
                                   [0.0, 0.5, 0.0])


def test_generate_video_structure(model, tiny_tok, scene, rig, traj, sched):
    times = [0.0, 0.4, 0.8]
    ctx_imgs, ctx_poses, frames = [], [], []
    for t in times[:2]:
        imgs, poses = render_frame(scene, rig, traj, t)
        ctx_imgs.append(imgs)
        ctx_poses.append(poses)
    _, poses = render_frame(scene, rig, traj, times[2])
    frames.append(FramePlan(times[2], poses))
    res = generate_video(model, tiny_tok, RolloutPlan(frames),
                         context=ctx_imgs, context_times=times[:2],
                         context_poses=ctx_poses, encode_conditions=False)
    assert len(res.tokens) == 1 and len(res.images) == 1
    assert len(res.tokens[0]) == 2  # views
    for tok, (h, w) in zip(res.tokens[0][0], sched.grids):
        assert tok.shape == (h, w, sched.bits)
        assert np.isin(tok, (-1.0, 1.0)).all()
    assert res.images[0][0].shape == (16, 16, 3)
    # context + generated frame all cached
    assert res.cache.retained_frame_indices() == [0, 1, 2]


def test_generate_video_deterministic(model, tiny_tok, scene, rig, traj):
    _, poses = render_frame(scene, rig, traj, 0.0)
    plan = RolloutPlan([FramePlan(0.0, poses)])
    a = generate_video(model, tiny_tok, plan, encode_conditions=False)
    b = generate_video(model, tiny_tok, plan, encode_conditions=False)
    for ta, tb in zip(a.tokens[0][0], b.tokens[0][0]):
        np.testing.assert_array_equal(ta, tb)
