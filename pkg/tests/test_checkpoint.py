"""Binary checkpoint format: bit-exact round trips and corruption detection."""

import struct

import numpy as np
import pytest

from rayworld.checkpoint import (MAGIC, CheckpointError, load_checkpoint,
                                 save_checkpoint)
from rayworld.model import ModelConfig, WorldModel
from rayworld.tokenizer import TokenizerNet


@pytest.fixture(scope="module")
def pair(sched):
    model = WorldModel(ModelConfig(layers=1, width=32, heads=2, head_dim=16,
                                   sched=sched, seed=3))
    tok = TokenizerNet(sched, hidden=16, seed=3)
    return model, tok


def test_round_trip_bit_exact(pair, tmp_path):
    model, tok = pair
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, model, tok, extra={"note": 1})
    m2, t2, extra = load_checkpoint(path)
    assert extra == {"note": 1}
    assert m2.cfg == model.cfg
    for name, p in model.named_parameters().items():
        np.testing.assert_array_equal(p.data, m2.named_parameters()[name].data)
    for name, p in tok.named_parameters().items():
        np.testing.assert_array_equal(p.data, t2.named_parameters()[name].data)


def test_resave_byte_identical(pair, tmp_path):
    model, tok = pair
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_checkpoint(p1, model, tok)
    m2, t2, _ = load_checkpoint(p1)
    save_checkpoint(p2, m2, t2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def _corrupt(path, out, fn):
    data = bytearray(open(path, "rb").read())
    fn(data)
    open(out, "wb").write(bytes(data))


def test_corruption_detection(pair, tmp_path):
    model, tok = pair
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, model, tok)
    bad = str(tmp_path / "bad.ckpt")

    _corrupt(path, bad, lambda d: d.__setitem__(0, d[0] ^ 0xFF))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)

    _corrupt(path, bad, lambda d: d.__setitem__(
        slice(len(MAGIC), len(MAGIC) + 4), struct.pack("<I", 99)))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)

    data = open(path, "rb").read()
    open(bad, "wb").write(data[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(bad)

    open(bad, "wb").write(data + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(bad)


def test_missing_file_is_not_checkpoint_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(tmp_path / "nope.ckpt"))
