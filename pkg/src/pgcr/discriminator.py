"""Per-patch fully connected discriminator.

The same MLP is applied to every flattened patch independently; there is no
positional input and no mixing between patches, so each score judges only
local content.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError
from .layers import ParamModel, add_linear, apply_linear
from .patches import TOY_GRID, PatchGrid, patchify

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class DiscriminatorConfig:
    grid: PatchGrid = field(default=TOY_GRID)
    hidden_dims: tuple[int, ...] = (512, 256)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if any(h <= 0 for h in self.hidden_dims):
            raise ShapeError(f"hidden_dims must be positive, got {self.hidden_dims}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.grid.patch_dim, *self.hidden_dims, 1]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        return {
            "image_size": self.grid.image_size,
            "patch_size": self.grid.patch_size,
            "channels": self.grid.channels,
            "hidden_dims": ",".join(str(h) for h in self.hidden_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        grid = PatchGrid(int(d["image_size"]), int(d["patch_size"]), int(d.get("channels", 3)))
        hidden = d.get("hidden_dims", "")
        if isinstance(hidden, str):
            hidden = tuple(int(h) for h in hidden.split(",") if h.strip())
        return cls(grid, tuple(hidden))


class DiscriminatorModel(ParamModel):
    kind = "discriminator"

    @property
    def grid(self) -> PatchGrid:
        return self.config.grid

    @property
    def num_layers(self) -> int:
        return len(self.config.layer_dims)


def init_discriminator(config: DiscriminatorConfig, seed: int = 0) -> DiscriminatorModel:
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for i, (fan_in, fan_out) in enumerate(config.layer_dims):
        add_linear(params, rng, f"layers.{i}", fan_in, fan_out)
    return DiscriminatorModel(config, params)


def patch_logits(model: DiscriminatorModel, image) -> Tensor:
    """Pre-sigmoid score per patch, shape ``[..., P]``."""
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image), dtype=model.dtype)
    h = patchify(x, model.grid)
    last = model.num_layers - 1
    for i in range(model.num_layers):
        h = apply_linear(model.params, f"layers.{i}", h)
        if i < last:
            h = ag.leaky_relu(h, LEAKY_SLOPE)
    return ag.reshape(h, h.shape[:-1])


def discriminate(model: DiscriminatorModel, image) -> Tensor:
    """Probability that each patch of ``image`` ([..., 3, S, S]) is real."""
    return ag.sigmoid(patch_logits(model, image))
