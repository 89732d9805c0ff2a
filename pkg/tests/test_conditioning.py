"""Condition encoder: text, box, and map features with view-aligned rays."""

import numpy as np
import pytest

from rayworld.conditioning import ConditionEncoder
from rayworld.model import batch_conditions
from rayworld.toyworld import annotate_frame, render_frame


@pytest.fixture(scope="module")
def encoder():
    return ConditionEncoder(width=32, seed=0)


def test_encode_text_deterministic(encoder):
    a = encoder.encode_text("a red cube moves forward")
    b = encoder.encode_text("a red cube moves forward")
    assert len(a) == len(b) > 0
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.vector.data, fb.vector.data)


def test_image_conditions_cover_annotations(encoder, scene, rig, traj):
    t = 0.5
    _, poses = render_frame(scene, rig, traj, t)
    boxes, lanes, caption = annotate_frame(scene, t)
    cs = encoder.encode_image_conditions(poses[0], caption, boxes, lanes)
    assert len(cs) > 0
    cs.validate()
    for f in cs.features:
        assert f.vector.shape == (32,)
        assert np.isfinite(f.vector.data).all()


def test_batch_conditions_padding(encoder, scene, rig, traj):
    t = 0.5
    _, poses = render_frame(scene, rig, traj, t)
    boxes, lanes, caption = annotate_frame(scene, t)
    per_view = {}
    for v, pose in enumerate(poses):
        cs = encoder.encode_image_conditions(pose, caption, boxes, lanes)
        if len(cs):
            per_view[(0, v)] = cs
    bc = batch_conditions([per_view], num_views=2, width=32)
    assert bc is not None
    assert bc.features.shape[0] == 1
    assert bc.features.shape[2] == 32
    assert batch_conditions([{}], num_views=2, width=32) is None


def test_gradient_reaches_encoder(encoder, scene, rig, traj):
    _, poses = render_frame(scene, rig, traj, 0.5)
    boxes, lanes, caption = annotate_frame(scene, 0.5)
    cs = encoder.encode_image_conditions(poses[0], caption, boxes, lanes)
    loss = None
    for f in cs.features:
        term = (f.vector * f.vector).sum()
        loss = term if loss is None else loss + term
    loss.backward()
    grads = [np.abs(p.grad).sum() for p in
             encoder.named_parameters().values() if p.grad is not None]
    assert sum(grads) > 0
