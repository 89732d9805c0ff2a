"""Ray geometry: line-coordinate invariants, camera projection."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from rayworld.geometry import (ExtendedRay, GeometryError, grid_rays,
                               pixel_ray_directions, project_points,
                               token_ray, unproject)
import pytest


def test_grid_ray_invariants(rig):
    """Directions are unit, moments are orthogonal to directions, and the
    (moment, direction) pair is invariant to sliding the origin point along
    the line."""
    pose = rig.camera_pose(np.array([1.0, -2.0]), 0.4, 0)
    m, d, t = grid_rays(pose, (4, 4), 1.5)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose((m * d).sum(axis=1), 0.0, atol=1e-12)
    assert (t == 1.5).all()
    # moment recomputed from any other point on the line is identical
    for lam in (-3.0, 0.7, 12.0):
        p = pose.translation + lam * d
        np.testing.assert_allclose(np.cross(p, d), m, atol=1e-9)


def test_token_ray_matches_grid(rig):
    pose = rig.camera_pose(np.zeros(2), 0.0, 1)
    m, d, t = grid_rays(pose, (2, 2), 0.25)
    for i in range(2):
        for j in range(2):
            ray = token_ray(pose, (2, 2), (i, j), 0.25)
            idx = i * 2 + j
            np.testing.assert_allclose(ray.m, m[idx], atol=1e-12)
            np.testing.assert_allclose(ray.d, d[idx], atol=1e-12)
            assert ray.t == 0.25
    with pytest.raises(GeometryError):
        token_ray(pose, (2, 2), (2, 0), 0.0)


def test_extended_ray_vector():
    r = ExtendedRay(np.arange(3.0), np.array([0.0, 0.0, 1.0]), 2.5)
    np.testing.assert_allclose(r.as_vector(), [0, 1, 2, 0, 0, 1, 2.5])


def test_projection_round_trip(rig):
    pose = rig.camera_pose(np.array([0.3, 0.1]), -0.2, 0)
    h, w = pose.height, pose.width
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = jj.ravel() + 0.5
    v = ii.ravel() + 0.5
    dirs = pixel_ray_directions(pose, u, v)
    pts = pose.translation + 3.7 * dirs
    uv, in_front = project_points(pose, pts)
    assert in_front.all()
    np.testing.assert_allclose(uv[:, 0], u, atol=1e-9)
    np.testing.assert_allclose(uv[:, 1], v, atol=1e-9)


@given(st.floats(0.5, 15.5), st.floats(0.5, 15.5), st.floats(0.1, 50.0))
@settings(max_examples=100, deadline=None)
def test_unproject_inverts_projection(rig, u, v, depth):
    pose = rig.camera_pose(np.array([2.0, -1.0]), 0.9, 0)
    p = unproject(pose, u, v, depth)
    uv, in_front = project_points(pose, p[None])
    assert in_front[0]
    np.testing.assert_allclose(uv[0], [u, v], atol=1e-8)


def test_translated_and_rotated_pose(rig):
    pose = rig.camera_pose(np.array([1.0, 2.0]), 0.3, 1)
    off = np.array([0.5, -1.0, 0.25])
    moved = pose.translated(off)
    np.testing.assert_allclose(moved.translation, pose.translation + off)
    np.testing.assert_allclose(moved.rotation, pose.rotation)
    rot = pose.rotated_z(0.0)
    np.testing.assert_allclose(rot.rotation, pose.rotation, atol=1e-12)
