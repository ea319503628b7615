"""Adam with per-group learning rates and layer-wise learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .exceptions import MissingGradientError


def layer_wise_lr(base_lr: float, decay: float, group_index: int, num_groups: int) -> float:
    """``base_lr * decay ** (num_groups - 1 - group_index)``.

    The output-most group gets ``base_lr``; groups nearer the input get
    geometrically smaller rates.
    """
    if not 0 < decay <= 1:
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    if not 0 <= group_index < num_groups:
        raise ValueError(f"group_index {group_index} outside [0, {num_groups})")
    return base_lr * decay ** (num_groups - 1 - group_index)


@dataclass
class ParamGroup:
    name: str
    names: list[str]
    params: list[Tensor]
    lr: float
    group_index: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"group {self.name}: lr must be positive, got {self.lr}")


@dataclass
class TrainState:
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    rng_seed: int = 0
    lambda_adv: float = 0.1
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    groups: list[ParamGroup] = field(default_factory=list)


def llrd_groups(model, base_lr: float, decay: float) -> list[ParamGroup]:
    """Group a model's parameters by depth and assign decayed learning rates."""
    layout = model.layer_groups()
    count = len(layout)
    return [
        ParamGroup(name, names, [model.params[n] for n in names], layer_wise_lr(base_lr, decay, i, count), i)
        for i, (name, names) in enumerate(layout)
    ]


def single_group(model, lr: float, name: str = "all") -> list[ParamGroup]:
    names = list(model.params)
    return [ParamGroup(name, names, [model.params[n] for n in names], lr, 0)]


def adam_step(state: TrainState, groups: list[ParamGroup]) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    for group in groups:
        for name, p in zip(group.names, group.params):
            if p.grad is None:
                raise MissingGradientError(f"parameter {name!r} in group {group.name!r} has no gradient")
    state.step += 1
    b1, b2 = state.betas
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for group in groups:
        for name, p in zip(group.names, group.params):
            g = p.grad
            m = state.adam_m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = state.adam_v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            state.adam_m[name] = m
            state.adam_v[name] = v
            update = group.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            p.data = (p.data - update).astype(p.dtype)
            p.grad = np.zeros_like(p.data)
