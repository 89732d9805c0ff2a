"""Rotary position codes: relative-difference identity, rotation algebra,
resolution-normalized axial codes, and the autodiff application path."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayworld.core import Tensor
from rayworld.geometry import ExtendedRay
from rayworld.rope import (RopeConfig, RopeConfigError,
                           apply_rotary, apply_rotary_angles, axial_2d_angles,
                           ray_rotation, rope_1d, rope_angles_1d,
                           rope_axial_2d)


def _rand_ray(rng):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    o = rng.normal(size=3)
    return ExtendedRay(m=np.cross(o, d), d=d, t=float(rng.uniform(0, 10)))


def test_relative_identity_rays():
    """Attention logits built from rotated q/k depend only on the coordinate
    difference of the two rays."""
    rng = np.random.default_rng(0)
    cfg = RopeConfig()
    d = 32
    for _ in range(100):
        ri, rj = _rand_ray(rng), _rand_ray(rng)
        ci, cj = ray_rotation(ri, cfg, d), ray_rotation(rj, cfg, d)
        q, k = rng.normal(size=d), rng.normal(size=d)
        lhs = apply_rotary(ci, q) @ apply_rotary(cj, k)
        rel = ci.inverse().compose(cj)
        rhs = q @ apply_rotary(rel, k)
        assert abs(lhs - rhs) <= 1e-9


def test_matrix_oracle_matches_pairwise_application():
    rng = np.random.default_rng(1)
    code = rope_1d(3.7, 16)
    v = rng.normal(size=16)
    np.testing.assert_allclose(apply_rotary(code, v), code.matrix() @ v,
                               atol=1e-12)


@given(st.floats(-100, 100), st.integers(0, 200))
@settings(max_examples=100, deadline=None)
def test_rotation_preserves_norm(pos, seed):
    v = np.random.default_rng(seed).normal(size=24)
    out = apply_rotary(rope_1d(pos, 24), v)
    assert abs(np.linalg.norm(out) - np.linalg.norm(v)) < 1e-9


def test_compose_inverse_identity():
    a = rope_1d(2.0, 8)
    ident = a.compose(a.inverse())
    np.testing.assert_allclose(ident.angles, 0.0, atol=1e-12)
    v = np.arange(8.0)
    np.testing.assert_allclose(apply_rotary(ident, v), v, atol=1e-12)


def test_axial_resolution_normalization():
    """The same fractional image position gives the same code regardless of
    the pixel grid the image uses."""
    a = rope_axial_2d(4, 6, 16, 16, 64, 16)
    b = rope_axial_2d(8, 12, 32, 32, 64, 16)
    np.testing.assert_allclose(a.angles, b.angles, atol=1e-12)


def test_axial_halves_encode_row_then_col():
    n = 16
    ang = axial_2d_angles(np.array([3.0]), np.array([0.0]), 64, 64, 64, n)
    assert np.allclose(ang[0, n // 4:], 0.0)
    ang = axial_2d_angles(np.array([0.0]), np.array([3.0]), 64, 64, 64, n)
    assert np.allclose(ang[0, :n // 4], 0.0)


def test_dimension_validation():
    with pytest.raises(RopeConfigError):
        rope_angles_1d(1.0, 7)
    with pytest.raises(RopeConfigError):
        rope_axial_2d(0, 0, 16, 16, 64, 6)
    with pytest.raises(RopeConfigError):
        ray_rotation(ExtendedRay(np.zeros(3), np.array([0, 0, 1.0]), 0.0),
                     RopeConfig(), 24)
    with pytest.raises(RopeConfigError):
        RopeConfig(base=-1.0)
    with pytest.raises(RopeConfigError):
        apply_rotary_angles(np.zeros(4), np.zeros(16))


def test_tensor_application_matches_numpy_and_has_gradient():
    rng = np.random.default_rng(2)
    angles = rope_angles_1d(1.3, 16)
    v = rng.normal(size=(2, 16)).astype(np.float32)
    vt = Tensor(v.copy(), requires_grad=True)
    out_t = apply_rotary_angles(angles, vt)
    out_n = apply_rotary_angles(angles, v)
    np.testing.assert_allclose(out_t.data, out_n, atol=1e-6)
    out_t.sum().backward()
    assert np.abs(vt.grad).sum() > 0
