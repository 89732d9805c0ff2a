"""Multi-scale bitwise residual tokenizer.

An image is patchified to a feature grid, then quantized scale by scale:
each scale binarizes the residual between the feature grid and the
accumulated reconstruction of coarser scales. Decoding any contiguous prefix
of scales yields an image whose fidelity improves with prefix length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AdamW, Linear, Module, Tensor, mse
from .core.tensor import NumericError


class TokenDataError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleSchedule:
    grids: tuple[tuple[int, int], ...] = ((1, 1), (2, 2), (4, 4))
    bits: int = 16
    patch: int = 4

    def __post_init__(self):
        hs = [g[0] for g in self.grids]
        ws = [g[1] for g in self.grids]
        if any(a > b for a, b in zip(hs, hs[1:])) or any(a > b for a, b in zip(ws, ws[1:])):
            raise TokenDataError(f"scale grids must be non-decreasing, got {self.grids}")

    @property
    def num_scales(self) -> int:
        return len(self.grids)

    @property
    def final_grid(self) -> tuple[int, int]:
        return self.grids[-1]

    def image_size(self) -> tuple[int, int]:
        h, w = self.final_grid
        return h * self.patch, w * self.patch

    def tokens_per_image(self) -> int:
        return sum(h * w for h, w in self.grids)

    def to_dict(self) -> dict:
        return {"grids": [list(g) for g in self.grids], "bits": self.bits, "patch": self.patch}

    @staticmethod
    def from_dict(d: dict) -> "ScaleSchedule":
        return ScaleSchedule(grids=tuple(tuple(g) for g in d["grids"]),
                             bits=d["bits"], patch=d["patch"])


@dataclass
class ScaleTokenMap:
    """One frame-view-scale grid of bitwise tokens, entries in {-1,+1}."""
    view: int
    time_index: int
    scale: int
    bits: np.ndarray  # (h_k, w_k, c)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.float32)
        if not np.isin(b, (-1.0, 1.0)).all():
            raise TokenDataError("token bits must be in {-1,+1}")
        self.bits = b


class _MixBlock(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.fc2(self.fc1(x).tanh())


class _SpatialMix(Module):
    """Residual learned mixing across the grid positions of a feature map
    (small-init dense position-to-position weights)."""

    def __init__(self, grid: tuple[int, int], rng: np.random.Generator):
        n = grid[0] * grid[1]
        self.grid = grid
        self.weight = Tensor(
            rng.normal(0.0, 0.2 / np.sqrt(n), size=(n, n)).astype(np.float32),
            requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        flat = x.reshape(b, h * w, c).transpose(0, 2, 1)   # (B, C, N)
        mixed = (flat @ self.weight).transpose(0, 2, 1).reshape(b, h, w, c)
        return x + mixed


class TokenizerNet(Module):
    """Patchify linear encoder and un-patchify decoder with per-position MLP
    mixing and learned spatial mixing over the final grid."""

    def __init__(self, sched: ScaleSchedule, hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.sched = sched
        p = sched.patch
        c = sched.bits
        grid = sched.final_grid
        self.enc = Linear(p * p * 3, c, rng)
        self.enc_space = _SpatialMix(grid, rng)
        self.enc_mix = _MixBlock(c, hidden, rng)
        self.dec_in = Linear(c, hidden, rng)
        self.dec_mix = _MixBlock(hidden, hidden, rng)
        self.dec_space = _SpatialMix(grid, rng)
        self.dec_mix2 = _MixBlock(hidden, hidden, rng)
        self.dec_space2 = _SpatialMix(grid, rng)
        self.dec_out = Linear(hidden, p * p * 3, rng)

    # -- plumbing ----------------------------------------------------------

    def _patchify(self, images: Tensor) -> Tensor:
        b, hh, ww, _ = images.shape
        p = self.sched.patch
        if hh % p or ww % p:
            raise TokenDataError(f"image dims {hh}x{ww} not divisible by patch {p}")
        h, w = hh // p, ww // p
        x = images.reshape(b, h, p, w, p, 3)
        x = x.transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(b, h, w, p * p * 3)

    def _unpatchify(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        p = self.sched.patch
        x = x.reshape(b, h, w, p, p, 3)
        x = x.transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(b, h * p, w * p, 3)

    def encode_features(self, images: Tensor) -> Tensor:
        hk, wk = self.sched.final_grid
        feats = self.enc_mix(self.enc_space(self.enc(self._patchify(images))))
        if feats.shape[1:3] != (hk, wk):
            raise TokenDataError(
                f"encoder grid {feats.shape[1:3]} does not match schedule {self.sched.final_grid}")
        return feats

    def decode_features(self, acc: Tensor) -> Tensor:
        x = self.dec_mix(self.dec_in(acc))
        x = self.dec_space(x)
        x = self.dec_mix2(x)
        x = self.dec_space2(x)
        return self._unpatchify(self.dec_out(x))


def _resample_batch(x: Tensor, h: int, w: int, up: bool) -> Tensor:
    from .core import apply_axis_matrix, area_matrix, bilinear_matrix
    mh = (bilinear_matrix if up else area_matrix)(h, x.shape[1]).astype(x.dtype)
    mw = (bilinear_matrix if up else area_matrix)(w, x.shape[2]).astype(x.dtype)
    return apply_axis_matrix(apply_axis_matrix(x, mh, axis=1), mw, axis=2)


def encode_multiscale(images: Tensor, net: TokenizerNet,
                      sched: ScaleSchedule | None = None) -> list[Tensor]:
    """Residual binarization into token maps for each scale.

    `images` is (B, H, W, 3) in [0, 1]; returns a list of (B, h_k, w_k, c)
    tensors of {-1,+1} bits (straight-through gradient when grad is enabled).
    """
    sched = sched or net.sched
    feats = net.encode_features(images)
    hk, wk = sched.final_grid
    acc = Tensor(np.zeros(feats.shape, dtype=feats.dtype))
    tokens: list[Tensor] = []
    for k, (h, w) in enumerate(sched.grids):
        r = feats - acc
        x_k = _resample_batch(r, h, w, up=False).sign_ste()
        tokens.append(x_k)
        acc = acc + _resample_batch(x_k, hk, wk, up=True)
    return tokens


def accumulate_tokens(tokens: list[Tensor], sched: ScaleSchedule) -> Tensor:
    """Sum of token maps upsampled to the final grid."""
    if not tokens:
        raise TokenDataError("empty token prefix")
    hk, wk = sched.final_grid
    for k, tok in enumerate(tokens):
        if tok.shape[1:3] != sched.grids[k]:
            raise TokenDataError(
                f"prefix must be contiguous from scale 1: slot {k} has grid "
                f"{tok.shape[1:3]}, schedule expects {sched.grids[k]}")
    acc = _resample_batch(tokens[0], hk, wk, up=True)
    for tok in tokens[1:]:
        acc = acc + _resample_batch(tok, hk, wk, up=True)
    return acc


def decode_from_scales(tokens: list[Tensor], net: TokenizerNet,
                       clamp: bool = True) -> Tensor:
    """Decode a contiguous scale prefix back to an image batch."""
    acc = accumulate_tokens(tokens, net.sched)
    out = net.decode_features(acc)
    if clamp:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def prefix_feature(tokens: list[Tensor], sched: ScaleSchedule, k: int) -> Tensor:
    """Teacher-forcing input content for scale step k (k >= 2, 1-based):
    accumulated coarser-scale tokens resampled to the step's grid."""
    if k < 2:
        raise TokenDataError("prefix_feature is defined for k >= 2; step 1 uses the start embedding")
    if len(tokens) < k - 1:
        raise TokenDataError(f"need {k - 1} prefix scales, got {len(tokens)}")
    acc = accumulate_tokens(tokens[:k - 1], sched)
    h, w = sched.grids[k - 1]
    return _resample_batch(acc, h, w, up=False)


def tokenizer_train_step(net: TokenizerNet, images: Tensor, opt: AdamW,
                         error_tokens: bool = False) -> float:
    """One optimization step on the reconstruction MSE over all scale
    prefixes, weighted toward longer prefixes (straight-through gradient
    through the binarizer). The linear weighting keeps refinement monotone
    while favoring full-prefix fidelity."""
    tokens = encode_multiscale(images, net)
    total_w = sum(range(1, len(tokens) + 1))
    loss = None
    for k in range(1, len(tokens) + 1):
        recon = decode_from_scales(tokens[:k], net, clamp=False)
        term = mse(recon, images) * (k / total_w)
        loss = term if loss is None else loss + term
    if np.isnan(loss.data).any():
        raise NumericError("tokenizer loss is NaN")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.data)


def train_tokenizer(net: TokenizerNet, images: np.ndarray, steps: int,
                    lr: float = 3e-3, batch_size: int = 16, seed: int = 0,
                    log_every: int = 0) -> list[float]:
    """Simple training loop over an (N, H, W, 3) image array."""
    rng = np.random.default_rng(seed)
    opt = AdamW(net.named_parameters(), lr=lr, weight_decay=1e-5)
    losses = []
    n = images.shape[0]
    for step in range(steps):
        # two-step learning-rate decay keeps late training stable
        if step == int(steps * 0.6):
            opt.lr = lr * 0.3
        elif step == int(steps * 0.85):
            opt.lr = lr * 0.1
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        loss = tokenizer_train_step(net, Tensor(images[idx].astype(np.float32)), opt)
        losses.append(loss)
        if log_every and step % log_every == 0:
            print(f"tokenizer step {step}: loss {loss:.5f}")
    return losses


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    err = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if err == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / err)
