"""Binary checkpoints: magic + version header, a JSON config block, and a
named little-endian float32 parameter table. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, WorldModel
from .tokenizer import ScaleSchedule, TokenizerNet

MAGIC = b"RWCKPT\x00"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _write_params(fh, prefix: str, params: dict[str, "np.ndarray"]):
    for name, data in params.items():
        full = f"{prefix}/{name}".encode()
        fh.write(struct.pack("<H", len(full)))
        fh.write(full)
        arr = np.ascontiguousarray(data, dtype="<f4")
        fh.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<I", d))
        fh.write(arr.tobytes())


def save_checkpoint(path: str, model: WorldModel, tok_net: TokenizerNet,
                    extra: dict | None = None):
    cfg = {
        "model": model.cfg.to_dict(),
        "tokenizer": {"sched": tok_net.sched.to_dict(),
                      "hidden": tok_net.dec_in.weight.shape[1]},
        "extra": extra or {},
    }
    blob = json.dumps(cfg).encode()
    mp = {k: p.data for k, p in model.named_parameters().items()}
    tp = {k: p.data for k, p in tok_net.named_parameters().items()}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(mp) + len(tp)))
        _write_params(fh, "model", mp)
        _write_params(fh, "tokenizer", tp)


def _read_exact(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def load_checkpoint(path: str) -> tuple[WorldModel, TokenizerNet, dict]:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic (not a checkpoint)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version} "
                f"(expected {VERSION})")
        (blen,) = struct.unpack("<Q", _read_exact(fh, 8))
        try:
            cfg = json.loads(_read_exact(fh, blen))
            model_cfg = ModelConfig.from_dict(cfg["model"])
            sched = ScaleSchedule.from_dict(cfg["tokenizer"]["sched"])
            hidden = int(cfg["tokenizer"]["hidden"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: corrupt config block: {e}") from e
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0]
                          for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(shape)
            params[name] = arr.astype(np.float32)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after parameter table")
    model = WorldModel(model_cfg)
    tok_net = TokenizerNet(sched, hidden=hidden)
    _assign(model, "model", params)
    _assign(tok_net, "tokenizer", params)
    return model, tok_net, cfg.get("extra", {})


def _assign(module, prefix: str, params: dict[str, np.ndarray]):
    own = module.named_parameters()
    for name, p in own.items():
        key = f"{prefix}/{name}"
        if key not in params:
            raise CheckpointError(f"missing parameter {key}")
        if params[key].shape != p.data.shape:
            raise CheckpointError(
                f"parameter {key}: shape {params[key].shape} != {p.data.shape}")
        p.data = params[key].copy()
    extras = [k for k in params if k.startswith(prefix + "/")
              and k[len(prefix) + 1:] not in own]
    if extras:
        raise CheckpointError(f"unknown parameters in table: {extras[:3]}")
