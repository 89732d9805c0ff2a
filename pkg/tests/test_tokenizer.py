"""Multi-scale bitwise residual tokenizer: shapes, bit validity, prefix
semantics, straight-through gradients, and schedule validation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayworld.core import AdamW, Tensor
from rayworld.tokenizer import (ScaleSchedule, ScaleTokenMap, TokenDataError,
                                TokenizerNet, accumulate_tokens,
                                decode_from_scales, encode_multiscale,
                                prefix_feature, psnr, tokenizer_train_step)


@pytest.fixture(scope="module")
def images():
    rng = np.random.default_rng(0)
    return Tensor(rng.uniform(0, 1, size=(4, 16, 16, 3)).astype(np.float32))


def test_schedule_properties(sched):
    assert sched.num_scales == 3
    assert sched.final_grid == (4, 4)
    assert sched.image_size() == (16, 16)
    assert sched.tokens_per_image() == 1 + 4 + 16
    assert ScaleSchedule.from_dict(sched.to_dict()) == sched


def test_schedule_rejects_decreasing_grids():
    with pytest.raises(TokenDataError):
        ScaleSchedule(grids=((2, 2), (1, 1)))


def test_encode_shapes_and_bit_values(tiny_tok, images, sched):
    tokens = encode_multiscale(images, tiny_tok)
    assert len(tokens) == sched.num_scales
    for tok, (h, w) in zip(tokens, sched.grids):
        assert tok.shape == (4, h, w, sched.bits)
        assert np.isin(tok.data, (-1.0, 1.0)).all()


def test_residual_ladder_definition(tiny_tok, images, sched):
    """Each scale's bits are the sign of the area-downsampled residual
    between the encoder features and the accumulated coarser scales."""
    from rayworld.tokenizer import _resample_batch
    feats = tiny_tok.encode_features(images)
    tokens = encode_multiscale(images, tiny_tok)
    hk, wk = sched.final_grid
    acc = np.zeros(feats.shape, dtype=np.float32)
    for tok, (h, w) in zip(tokens, sched.grids):
        resid = _resample_batch(Tensor(feats.data - acc), h, w, up=False).data
        expect = np.where(resid >= 0, 1.0, -1.0)
        np.testing.assert_array_equal(tok.data, expect)
        acc = acc + _resample_batch(tok, hk, wk, up=True).data


def test_decode_is_deterministic(tiny_tok, images):
    tokens = encode_multiscale(images, tiny_tok)
    a = decode_from_scales(tokens, tiny_tok).data
    b = decode_from_scales(tokens, tiny_tok).data
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4, 16, 16, 3)
    assert (a >= 0).all() and (a <= 1).all()


def test_accumulate_validation(tiny_tok, images, sched):
    tokens = encode_multiscale(images, tiny_tok)
    with pytest.raises(TokenDataError):
        accumulate_tokens([], sched)
    with pytest.raises(TokenDataError):
        accumulate_tokens([tokens[1]], sched)  # not contiguous from scale 1


def test_prefix_feature_contract(tiny_tok, images, sched):
    tokens = encode_multiscale(images, tiny_tok)
    with pytest.raises(TokenDataError):
        prefix_feature(tokens, sched, 1)
    with pytest.raises(TokenDataError):
        prefix_feature(tokens[:1], sched, 3)
    feat = prefix_feature(tokens, sched, 3)
    assert feat.shape == (4, *sched.grids[2], sched.bits)
    # scale-2 feature is the scale-1 token broadcast to the 2x2 grid
    f2 = prefix_feature(tokens, sched, 2)
    np.testing.assert_allclose(
        f2.data, np.broadcast_to(tokens[0].data, f2.shape), atol=1e-6)


def test_straight_through_gradient(tiny_tok, sched):
    rng = np.random.default_rng(1)
    imgs = Tensor(rng.uniform(0, 1, (2, 16, 16, 3)).astype(np.float32))
    tokens = encode_multiscale(imgs, tiny_tok)
    recon = decode_from_scales(tokens, tiny_tok, clamp=False)
    ((recon - imgs) * (recon - imgs)).mean().backward()
    enc_grad = np.abs(tiny_tok.enc.weight.grad).sum()
    assert enc_grad > 0, "no gradient reached the encoder through the sign"


def test_train_step_reduces_loss(sched):
    rng = np.random.default_rng(2)
    imgs = Tensor(rng.uniform(0, 1, (8, 16, 16, 3)).astype(np.float32))
    net = TokenizerNet(sched, hidden=16, seed=3)
    opt = AdamW(net.named_parameters(), lr=3e-3)
    first = tokenizer_train_step(net, imgs, opt)
    for _ in range(30):
        last = tokenizer_train_step(net, imgs, opt)
    assert last < first


def test_token_map_validation():
    ScaleTokenMap(0, 0, 0, np.ones((2, 2, 4)))
    with pytest.raises(TokenDataError):
        ScaleTokenMap(0, 0, 0, np.full((2, 2, 4), 0.5))


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_accumulate_bounded_by_scale_count(tiny_tok, seed):
    """Plain bit sums stay within [-K, K] per channel."""
    sched = tiny_tok.sched
    rng = np.random.default_rng(seed)
    tokens = [Tensor(rng.choice([-1.0, 1.0], size=(1, h, w, sched.bits))
                     .astype(np.float32)) for h, w in sched.grids]
    acc = accumulate_tokens(tokens, sched).data
    assert np.abs(acc).max() <= sched.num_scales + 1e-6


def test_psnr_oracle():
    a = np.zeros((4, 4))
    assert psnr(a, a) == float("inf")
    b = np.full((4, 4), 0.1)
    assert abs(psnr(a, b) - 20.0) < 1e-9
