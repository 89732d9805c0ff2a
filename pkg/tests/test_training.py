"""Training loops: loss oracles, clip data plumbing, error-injected teacher
forcing, and recurrent per-frame accumulation."""

import numpy as np
import pytest

from rayworld.core import AdamW, Tensor
from rayworld.model import ModelConfig, WorldModel
from rayworld.training import (TrainConfig, TrainConfigError,
                               TrainStats, bit_accuracy, bit_cross_entropy,
                               clip_layout, clip_targets, clip_train_step,
                               recurrent_train_step, render_clip,
                               train_model, write_stats_csv)


@pytest.fixture(scope="module")
def model(sched):
    return WorldModel(ModelConfig(layers=1, width=32, heads=2, head_dim=16,
                                  sched=sched))


@pytest.fixture(scope="module")
def clip(scene, rig, traj, tiny_tok):
    return render_clip(scene, rig, traj, [0.0, 0.4, 0.8], tiny_tok)


def test_bit_cross_entropy_oracle():
    """softplus(-t*z), checked against direct numpy evaluation."""
    rng = np.random.default_rng(0)
    z = rng.normal(size=(2, 5, 4)).astype(np.float64)
    t = np.where(rng.random((2, 5, 4)) < 0.5, 1.0, -1.0)
    loss = bit_cross_entropy(Tensor(z), t)
    expect = np.logaddexp(0.0, -t * z).mean()
    assert abs(float(loss.data) - expect) < 1e-9
    # ln 2 at zero logits
    assert abs(float(bit_cross_entropy(Tensor(np.zeros((1, 4))),
                                       np.ones((1, 4))).data)
               - np.log(2)) < 1e-12


def test_bit_cross_entropy_shape_mismatch():
    with pytest.raises(TrainConfigError):
        bit_cross_entropy(Tensor(np.zeros((1, 4))), np.ones((1, 5)))


def test_bit_accuracy_oracle():
    logits = np.array([1.0, -2.0, 3.0, -4.0])
    targets = np.array([1.0, 1.0, 1.0, -1.0])
    assert bit_accuracy(logits, targets) == 0.75


def test_train_config_validation():
    with pytest.raises(TrainConfigError):
        TrainConfig(stage1_steps=-1)
    with pytest.raises(TrainConfigError):
        TrainConfig(error_rate=1.5)
    with pytest.raises(TrainConfigError):
        TrainConfig(clip_frames=0)


def test_train_config_round_trip(tmp_path):
    cfg = TrainConfig(stage1_steps=7, lr1=1e-3, error_rate=0.1)
    path = str(tmp_path / "cfg.json")
    cfg.save(path)
    assert TrainConfig.load(path) == cfg


def test_clip_structure(clip, sched):
    assert clip.num_frames == 3
    assert len(clip.poses[0]) == 2
    assert len(clip.tokens[0][0]) == sched.num_scales
    sub = clip.frame_prefix(2)
    assert sub.num_frames == 2
    assert sub.caption == clip.caption


def test_clip_targets_match_tokens(clip, model, sched):
    layout = clip_layout(clip, model.cfg)
    targets = clip_targets(clip, layout)
    assert targets.shape == (layout.num_tokens, sched.bits)
    sel = (layout.t_idx == 1) & (layout.v_idx == 0) & (layout.k_idx == 2)
    np.testing.assert_array_equal(
        targets[sel], clip.tokens[1][0][2].reshape(-1, sched.bits))


def test_clip_training_reduces_loss(clip, sched):
    model = WorldModel(ModelConfig(layers=1, width=32, heads=2, head_dim=16,
                                   sched=sched, seed=5))
    opt = AdamW(model.named_parameters(), lr=1e-3)
    rng = np.random.default_rng(0)
    layouts = [clip_layout(clip, model.cfg)]
    first = clip_train_step(model, opt, [clip], 0.05, rng,
                            use_conditions=False, layouts=layouts)
    for _ in range(10):
        last = clip_train_step(model, opt, [clip], 0.05, rng,
                               use_conditions=False, layouts=layouts)
    assert last.loss < first.loss
    assert last.grad_norm > 0


def test_recurrent_step_runs_and_accumulates(clip, sched):
    model = WorldModel(ModelConfig(layers=1, width=32, heads=2, head_dim=16,
                                   sched=sched, seed=6))
    opt = AdamW(model.named_parameters(), lr=1e-3)
    rng = np.random.default_rng(0)
    s = recurrent_train_step(model, opt, clip, cache_capacity=2,
                             error_rate=0.05, rng=rng, use_conditions=False)
    assert np.isfinite(s.loss) and s.grad_norm > 0
    assert 0.0 <= s.bit_accuracy <= 1.0


def test_train_model_stages(clip, sched, tmp_path):
    model = WorldModel(ModelConfig(layers=1, width=32, heads=2, head_dim=16,
                                   sched=sched, seed=7))
    tags = []
    cfg = TrainConfig(stage1_steps=2, stage3_steps=1, batch_size=1,
                      use_conditions=False, log_every=0)
    stats = train_model(model, [clip], cfg, long_clips=[clip],
                        stats_path=str(tmp_path / "stats.csv"),
                        checkpoint_fn=tags.append)
    assert len(stats) == 3
    assert tags == ["stage1", "stage3"]
    assert (tmp_path / "stats.csv").exists()


def test_write_stats_csv(tmp_path):
    rows = [TrainStats(1, 0.5, 0.9, 1.0, 0.1)]
    path = tmp_path / "s.csv"
    write_stats_csv(str(path), rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,loss,bit_accuracy,grad_norm,seconds"
    assert lines[1].startswith("1,0.500000,0.900000")
