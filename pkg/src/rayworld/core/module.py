"""Parameter containers with named parameter collection for checkpointing."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Module:
    """Base class: any attribute that is a parameter Tensor, a Module, or a
    list of Modules is picked up by `named_parameters()` in declaration order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}" if not prefix else f"{prefix}.{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                params[name] = val
            elif isinstance(val, Module):
                params.update(val.named_parameters(name))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{name}.{i}"))
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        """Cast all parameters in place (for float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def load_state(self, state: dict[str, np.ndarray]):
        own = self.named_parameters()
        if set(own) != set(state):
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}")
            p.data = state[name].astype(p.data.dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias: bool = True, scale: float | None = None, dtype=np.float32):
        std = scale if scale is not None else (1.0 / np.sqrt(n_in))
        self.weight = Tensor(rng.normal(0.0, std, size=(n_in, n_out)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import layer_norm
        return layer_norm(x, self.gain, self.shift)
