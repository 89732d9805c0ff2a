"""Central finite-difference gradient checking in float64.

`check_gradients` compares the analytic gradients of a scalar loss against
central differences over every parameter entry (or a random subset for large
parameter groups). Binarizer (straight-through) outputs are frozen during the
difference evaluations via capture/playback so the finite difference probes
the same relaxed function the backward pass differentiates.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, quant_capture, quant_playback


def numeric_gradient(f: Callable[[], Tensor], param: Tensor, h: float = 1e-4,
                     max_entries: int | None = None,
                     rng: np.random.Generator | None = None,
                     freeze_quant: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Return (indices, fd_gradient) for entries of `param`.

    `f` re-evaluates the loss from current parameter values.
    """
    flat = param.data.reshape(-1)
    n = flat.size
    if max_entries is not None and n > max_entries:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=max_entries, replace=False))
    else:
        idx = np.arange(n)

    records = None
    if freeze_quant:
        with quant_capture() as records:
            f()

    def evaluate() -> float:
        if records is not None:
            with quant_playback(records):
                return float(f().data)
        return float(f().data)

    grads = np.zeros(len(idx), dtype=np.float64)
    for out_i, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = evaluate()
        flat[i] = orig - h
        fm = evaluate()
        flat[i] = orig
        grads[out_i] = (fp - fm) / (2 * h)
    return idx, grads


def check_gradients(f: Callable[[], Tensor], params: dict[str, Tensor],
                    h: float = 1e-4, rtol: float = 1e-3,
                    max_entries_per_param: int | None = None,
                    rng: np.random.Generator | None = None,
                    freeze_quant: bool = False) -> dict[str, float]:
    """Backward once, then finite-difference every parameter group.

    Returns per-parameter relative error; raises AssertionError on failure.
    """
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic_full = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx, fd = numeric_gradient(f, p, h=h, max_entries=max_entries_per_param,
                                   rng=rng, freeze_quant=freeze_quant)
        analytic = analytic_full.reshape(-1)[idx].astype(np.float64)
        denom = max(np.abs(fd).max(), np.abs(analytic).max(), 1e-8)
        rel = float(np.abs(analytic - fd).max() / denom)
        errors[name] = rel
        if rel >= rtol:
            worst = int(np.abs(analytic - fd).argmax())
            raise AssertionError(
                f"gradient check failed for {name}: rel err {rel:.3e} "
                f"(analytic {analytic[worst]:.6e} vs fd {fd[worst]:.6e})")
    return errors
