"""Parameter containers and transformer building blocks shared by both networks."""
from __future__ import annotations

import copy
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within ``bound`` std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(np.float32)


class ParamModel:
    """Ordered name -> Tensor parameter store plus an immutable config."""

    kind = "model"

    def __init__(self, config, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            value = np.asarray(value)
            if value.shape != self.params[name].shape:
                raise ShapeError(f"{name}: expected shape {self.params[name].shape}, got {value.shape}")
            self.params[name].data = value.astype(self.params[name].dtype, copy=True)

    def copy(self):
        clone = copy.copy(self)
        clone.params = OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=v.requires_grad, dtype=v.dtype)) for k, v in self.params.items()
        )
        return clone

    def astype(self, dtype):
        clone = self.copy()
        for p in clone.params.values():
            p.data = p.data.astype(dtype)
        return clone

    def zero_grad(self) -> None:
        ag.zero_grad(self.params.values())

    def all_finite(self) -> bool:
        return all(p.is_finite() for p in self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


def add_linear(params, rng, name: str, fan_in: int, fan_out: int) -> None:
    params[f"{name}.weight"] = Tensor(trunc_normal(rng, (fan_in, fan_out)), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)


def add_norm(params, name: str, dim: int) -> None:
    params[f"{name}.weight"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(dim), requires_grad=True)


def add_block(params, rng, name: str, dim: int, mlp_ratio: int = 4) -> None:
    add_norm(params, f"{name}.norm1", dim)
    add_linear(params, rng, f"{name}.attn.qkv", dim, 3 * dim)
    add_linear(params, rng, f"{name}.attn.proj", dim, dim)
    add_norm(params, f"{name}.norm2", dim)
    add_linear(params, rng, f"{name}.mlp.fc1", dim, mlp_ratio * dim)
    add_linear(params, rng, f"{name}.mlp.fc2", mlp_ratio * dim, dim)


def apply_linear(params, name: str, x: Tensor) -> Tensor:
    return ag.linear(x, params[f"{name}.weight"], params[f"{name}.bias"])


def apply_norm(params, name: str, x: Tensor, eps: float = 1e-6) -> Tensor:
    return ag.layer_norm(x, params[f"{name}.weight"], params[f"{name}.bias"], eps)


def self_attention(params, name: str, x: Tensor, heads: int) -> Tensor:
    *lead, n, dim = x.shape
    lead = tuple(lead)
    hd = dim // heads
    k = len(lead)
    qkv = apply_linear(params, f"{name}.qkv", x)
    qkv = ag.reshape(qkv, lead + (n, 3, heads, hd))
    # -> [3, ..., heads, N, hd]
    qkv = ag.permute(qkv, (k + 1,) + tuple(range(k)) + (k + 2, k, k + 3))
    q, kk, v = qkv[0], qkv[1], qkv[2]
    scores = ag.matmul(q, ag.swapaxes(kk, -1, -2)) * (hd ** -0.5)
    attn = ag.softmax(scores, axis=-1)
    out = ag.matmul(attn, v)
    # -> [..., N, heads, hd]
    out = ag.permute(out, tuple(range(k)) + (k + 1, k, k + 2))
    out = ag.reshape(out, lead + (n, dim))
    return apply_linear(params, f"{name}.proj", out)


def transformer_block(params, name: str, x: Tensor, heads: int) -> Tensor:
    """Pre-norm block: ``x + MSA(LN(x))`` then ``x + MLP(LN(x))``."""
    x = x + self_attention(params, f"{name}.attn", apply_norm(params, f"{name}.norm1", x), heads)
    h = apply_linear(params, f"{name}.mlp.fc1", apply_norm(params, f"{name}.norm2", x))
    return x + apply_linear(params, f"{name}.mlp.fc2", ag.gelu(h))

