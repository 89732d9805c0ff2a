"""World model: dual-causal masks, sequence layout invariants, configuration
validation, and the teacher-forced forward pass."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayworld.model import (CAUSALITY_VARIANTS, ConfigError, ModelConfig,
                            WorldModel, build_layout, build_step_inputs,
                            decoupled_masks, dual_causal_mask,
                            dual_causal_step_mask, forward_teacher_forced,
                            image_attention_mask, step_allowed)
from rayworld.toyworld import render_frame


@pytest.fixture(scope="module")
def cfg(sched):
    return ModelConfig(layers=1, width=32, heads=2, head_dim=16, sched=sched)


@pytest.fixture(scope="module")
def layout(cfg, scene, rig, traj):
    times = [0.0, 0.4]
    poses = [render_frame(scene, rig, traj, t)[1] for t in times]
    return build_layout(cfg.sched, poses, times, cfg)


def test_config_validation(sched):
    with pytest.raises(ConfigError):
        ModelConfig(causality="bogus")
    with pytest.raises(ConfigError):
        ModelConfig(st_variant="bogus")
    with pytest.raises(ConfigError):
        ModelConfig(pos_variant="bogus")
    d = ModelConfig(sched=sched).to_dict()
    assert ModelConfig.from_dict(d) == ModelConfig(sched=sched)


@given(st.integers(0, 4), st.integers(0, 2), st.integers(0, 4),
       st.integers(0, 2))
@settings(max_examples=300, deadline=None)
def test_step_allowed_definitions(t, k, tp, kp):
    """Oracle re-statement of the three scale-time orderings."""
    assert step_allowed("prefix_scales", t, k, tp, kp) == (tp <= t and kp <= k)
    assert step_allowed("all_scales", t, k, tp, kp) == (
        tp < t or (tp == t and kp <= k))
    assert step_allowed("same_scale", t, k, tp, kp) == (
        (tp < t and kp == k) or (tp == t and kp <= k))


def test_all_variants_allow_self_and_are_temporal_causal():
    steps = [(t, k) for t in range(3) for k in range(3)]
    for variant in CAUSALITY_VARIANTS:
        ok = dual_causal_step_mask(steps, variant)
        assert ok.diagonal().all()
        for a, (t, k) in enumerate(steps):
            for b, (tp, kp) in enumerate(steps):
                if tp > t:
                    assert not ok[a, b], "future frame leaked"


def test_layout_ordering_and_counts(layout, sched):
    n_per_frame = 2 * sched.tokens_per_image()
    assert layout.num_tokens == 2 * n_per_frame
    # lexicographic by (t, k), with both views inside one step
    order = np.lexsort((layout.v_idx, layout.k_idx, layout.t_idx))
    np.testing.assert_array_equal(order, np.arange(layout.num_tokens))
    for (t, k), sl in zip(layout.steps, layout.step_slices):
        assert (layout.t_idx[sl] == t).all()
        assert (layout.k_idx[sl] == k).all()


def test_token_mask_matches_step_mask(layout):
    for variant in CAUSALITY_VARIANTS:
        mask = dual_causal_mask(layout, variant)
        ok = dual_causal_step_mask(layout.steps, variant)
        for a, sa in enumerate(layout.step_slices):
            for b, sb in enumerate(layout.step_slices):
                block = mask[sa, sb]
                if ok[a, b]:
                    assert (block == 0).all()
                else:
                    assert np.isneginf(block).all()


def test_image_mask_is_intra_image_scale_causal(layout):
    mask = image_attention_mask(layout)
    allowed = mask == 0
    same_img = layout.image_id[:, None] == layout.image_id[None, :]
    scale_ok = layout.k_idx[None, :] <= layout.k_idx[:, None]
    np.testing.assert_array_equal(allowed, same_img & scale_ok)


def test_decoupled_masks_partition_spatiotemporal_scope(layout):
    cross_view, cross_frame = decoupled_masks(layout)
    cv, cf = cross_view == 0, cross_frame == 0
    same_t = layout.t_idx[:, None] == layout.t_idx[None, :]
    assert (cv & ~same_t).sum() == 0  # cross-view stays within a frame
    same_track = layout.track_id[:, None] == layout.track_id[None, :]
    assert not (cf & ~same_track).any()  # cross-frame stays on a pixel track


def test_track_ids_stable_over_time(layout):
    """The same (view, scale, row, col) cell shares a track id across
    frames, enabling per-track temporal attention."""
    t0 = layout.t_idx == 0
    t1 = layout.t_idx == 1
    key0 = {(v, k, r, c): tr for v, k, r, c, tr in zip(
        layout.v_idx[t0], layout.k_idx[t0], layout.row[t0], layout.col[t0],
        layout.track_id[t0])}
    for v, k, r, c, tr in zip(layout.v_idx[t1], layout.k_idx[t1],
                              layout.row[t1], layout.col[t1],
                              layout.track_id[t1]):
        assert key0[(v, k, r, c)] == tr


def test_step_inputs_shapes_and_start_flag(layout, tiny_tok, scene, rig, traj):
    from rayworld.engine import tokenize_views
    times = [0.0, 0.4]
    tokens = []
    for t in times:
        imgs, _ = render_frame(scene, rig, traj, t)
        tokens.append(tokenize_views(tiny_tok, imgs))
    inputs, start = build_step_inputs(tokens, layout)
    assert inputs.shape == (layout.num_tokens, layout.sched.bits)
    np.testing.assert_array_equal(start, layout.k_idx == 0)
    assert (inputs[start] == 0).all()


def test_teacher_forced_forward_shapes(cfg, layout, tiny_tok, scene, rig, traj):
    from rayworld.engine import tokenize_views
    model = WorldModel(cfg)
    tokens = []
    for t in (0.0, 0.4):
        imgs, _ = render_frame(scene, rig, traj, t)
        tokens.append(tokenize_views(tiny_tok, imgs))
    logits, _ = forward_teacher_forced(model, [tokens], [layout])
    assert logits.shape == (1, layout.num_tokens, cfg.sched.bits)
    assert np.isfinite(logits.data).all()
