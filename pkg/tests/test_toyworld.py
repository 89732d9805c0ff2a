"""Procedural toy world: rendering determinism, scene content, annotations,
and dataset files."""

import numpy as np
import pytest

from rayworld.toyworld import (RigSpec, annotate_frame, build_dataset,
                               default_trajectories, random_scene, read_ppm,
                               render_frame, render_view, write_ppm)


def test_render_deterministic(scene, rig, traj):
    a, poses_a = render_frame(scene, rig, traj, 0.7)
    b, poses_b = render_frame(scene, rig, traj, 0.7)
    for ia, ib in zip(a, b):
        np.testing.assert_array_equal(ia, ib)
    for pa, pb in zip(poses_a, poses_b):
        np.testing.assert_array_equal(pa.translation, pb.translation)


def test_render_shape_and_range(scene, rig, traj):
    imgs, poses = render_frame(scene, rig, traj, 0.0)
    assert len(imgs) == rig.num_views == len(poses)
    for img in imgs:
        assert img.shape == (rig.image_h, rig.image_w, 3)
        assert (img >= 0).all() and (img <= 1).all()


def test_render_rejects_out_of_range_time(scene, rig, traj):
    with pytest.raises(ValueError):
        render_frame(scene, rig, traj, scene.duration + 1.0)


def test_dynamic_scene_changes_over_time(rig, traj):
    scene = random_scene(3, dynamic=True)
    a, _ = render_frame(scene, rig, traj, 0.0)
    b, _ = render_frame(scene, rig, traj, 2.0)
    assert any(np.abs(ia - ib).max() > 0.05 for ia, ib in zip(a, b))


def test_static_scene_is_static_for_fixed_camera():
    scene = random_scene(4, dynamic=False)
    rig = RigSpec()
    pose = rig.camera_pose(np.zeros(2), 0.0, 0)
    a = render_view(scene, pose, 0.0)
    b = render_view(scene, pose, 2.0)
    np.testing.assert_array_equal(a, b)


def test_depth_channel(scene, rig, traj):
    _, poses = render_frame(scene, rig, traj, 0.0)
    img, depth = render_view(scene, poses[0], 0.0, with_depth=True)
    assert depth.shape == img.shape[:2]
    finite = depth[np.isfinite(depth)]
    assert len(finite) > 0 and (finite > 0).all()


def test_annotations_match_scene(scene):
    boxes, lanes, caption = annotate_frame(scene, 0.5)
    assert len(boxes) == len(scene.cuboids)
    for b in boxes:
        assert set(b) >= {"center", "size", "yaw", "category", "color"}
    assert isinstance(caption, str) and caption


def test_moving_box_annotation_advects(scene):
    b0, _, _ = annotate_frame(scene, 0.0)
    b1, _, _ = annotate_frame(scene, 1.0)
    vel = np.array(scene.cuboids[0].velocity)
    np.testing.assert_allclose(np.array(b1[0]["center"]),
                               np.array(b0[0]["center"]) + vel, atol=1e-9)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(8, 8, 3))
    path = str(tmp_path / "img.ppm")
    write_ppm(path, img)
    back = read_ppm(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_build_dataset_deterministic(tmp_path):
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    ids1 = build_dataset(d1, n_scenes=2, seed=3, frames_per_scene=2)
    ids2 = build_dataset(d2, n_scenes=2, seed=3, frames_per_scene=2)
    assert ids1 == ids2
    import os
    files = sorted(os.listdir(os.path.join(d1, ids1[0])))
    assert files
    for name in files:
        a = open(os.path.join(d1, ids1[0], name), "rb").read()
        b = open(os.path.join(d2, ids2[0], name), "rb").read()
        assert a == b


def test_trajectories_move_forward():
    for name, traj in default_trajectories().items():
        xy0, _ = traj.pose_at(0.0)
        xy1, _ = traj.pose_at(2.0)
        assert np.linalg.norm(np.asarray(xy1) - np.asarray(xy0)) > 0.5, name
