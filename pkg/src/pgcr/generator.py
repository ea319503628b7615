"""MAE-style ViT encoder/decoder used as the cloud-removal generator."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError
from .layers import (
    ParamModel,
    add_block,
    add_linear,
    add_norm,
    apply_linear,
    apply_norm,
    transformer_block,
    trunc_normal,
)
from .patches import (
    PAPER_GRID,
    TOY_GRID,
    MaskPlan,
    PatchGrid,
    make_mask_plan,
    patchify,
    sincos_positional_embedding,
    stack_plans,
    unpatchify,
)


@dataclass(frozen=True)
class GeneratorConfig:
    grid: PatchGrid = field(default=TOY_GRID)
    enc_dim: int = 64
    enc_depth: int = 2
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 1
    dec_heads: int = 4

    def __post_init__(self):
        for name in ("enc_dim", "enc_depth", "enc_heads", "dec_dim", "dec_depth", "dec_heads"):
            if getattr(self, name) <= 0:
                raise ShapeError(f"GeneratorConfig.{name} must be positive")
        if self.enc_dim % self.enc_heads:
            raise ShapeError(f"enc_dim {self.enc_dim} is not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads:
            raise ShapeError(f"dec_dim {self.dec_dim} is not divisible by dec_heads {self.dec_heads}")
        if self.enc_dim % 4 or self.dec_dim % 4:
            raise ShapeError("enc_dim and dec_dim must be multiples of 4 for the 2-D sin-cos table")

    @classmethod
    def toy(cls) -> "GeneratorConfig":
        return cls()

    @classmethod
    def paper(cls) -> "GeneratorConfig":
        # ViT-large encoder, MAE's 8-block decoder
        return cls(PAPER_GRID, 1024, 24, 16, 512, 8, 16)

    def to_dict(self) -> dict:
        d = asdict(self)
        grid = d.pop("grid")
        return {"image_size": grid["image_size"], "patch_size": grid["patch_size"], "channels": grid["channels"], **d}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        grid = PatchGrid(int(d["image_size"]), int(d["patch_size"]), int(d.get("channels", 3)))
        keys = ("enc_dim", "enc_depth", "enc_heads", "dec_dim", "dec_depth", "dec_heads")
        return cls(grid, **{k: int(d[k]) for k in keys})


class GeneratorModel(ParamModel):
    kind = "generator"

    def __init__(self, config: GeneratorConfig, params):
        super().__init__(config, params)
        self.enc_pos = sincos_positional_embedding(config.grid, config.enc_dim)
        self.dec_pos = sincos_positional_embedding(config.grid, config.dec_dim)

    @property
    def grid(self) -> PatchGrid:
        return self.config.grid

    def layer_groups(self) -> list[tuple[str, list[str]]]:
        """Parameter names grouped from input-most to output-most.

        patch embedding | one group per encoder block | encoder norm, decoder
        embedding and mask token | one group per decoder block | decoder norm
        and prediction head.
        """
        cfg = self.config
        names = list(self.params)

        def prefixed(*prefixes):
            return [n for n in names if n.startswith(prefixes)]

        groups = [("patch_embed", prefixed("patch_embed."))]
        groups += [(f"enc.{i}", prefixed(f"enc.{i}.")) for i in range(cfg.enc_depth)]
        groups.append(("dec_embed", prefixed("enc_norm.", "dec_embed.", "mask_token")))
        groups += [(f"dec.{i}", prefixed(f"dec.{i}.")) for i in range(cfg.dec_depth)]
        groups.append(("pred_head", prefixed("dec_norm.", "pred_head.")))
        return groups


def init_generator(config: GeneratorConfig, seed: int = 0) -> GeneratorModel:
    rng = np.random.default_rng(seed)
    cfg = config
    p: OrderedDict[str, Tensor] = OrderedDict()
    add_linear(p, rng, "patch_embed", cfg.grid.patch_dim, cfg.enc_dim)
    for i in range(cfg.enc_depth):
        add_block(p, rng, f"enc.{i}", cfg.enc_dim)
    add_norm(p, "enc_norm", cfg.enc_dim)
    add_linear(p, rng, "dec_embed", cfg.enc_dim, cfg.dec_dim)
    p["mask_token"] = Tensor(trunc_normal(rng, (cfg.dec_dim,)), requires_grad=True)
    for i in range(cfg.dec_depth):
        add_block(p, rng, f"dec.{i}", cfg.dec_dim)
    add_norm(p, "dec_norm", cfg.dec_dim)
    add_linear(p, rng, "pred_head", cfg.dec_dim, cfg.grid.patch_dim)
    return GeneratorModel(cfg, p)


def _as_input(model: ParamModel, x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=model.dtype)


def encode(model: GeneratorModel, patches, plan: MaskPlan | list[MaskPlan] | None = None) -> Tensor:
    """Embed visible patches and run the encoder; returns ``[..., K, enc_dim]``.

    Masked rows are dropped before the embedding, so their contents never
    enter the computation.
    """
    grid = model.grid
    x = _as_input(model, patches)
    if x.ndim < 2 or x.shape[-2:] != (grid.num_patches, grid.patch_dim):
        raise ShapeError(
            f"encode: patches of shape {x.shape} do not match [..., {grid.num_patches}, {grid.patch_dim}]"
        )
    pos = model.enc_pos.astype(x.dtype)
    if plan is not None:
        keep = stack_plans(plan)[0]
        if keep.ndim > 1 and keep.shape[:-1] != x.shape[:-2]:
            raise ShapeError(f"encode: {keep.shape[0]} mask plans for a batch of shape {x.shape[:-2]}")
        x = ag.gather_rows(x, keep)
        pos = pos[keep]
    x = apply_linear(model.params, "patch_embed", x) + pos
    for i in range(model.config.enc_depth):
        x = transformer_block(model.params, f"enc.{i}", x, model.config.enc_heads)
    return apply_norm(model.params, "enc_norm", x)


def decode(model: GeneratorModel, latents: Tensor, plan: MaskPlan | list[MaskPlan] | None = None) -> Tensor:
    """Decoder pass producing one ``patch_dim`` row per patch, in raster order."""
    cfg, grid = model.config, model.grid
    if latents.ndim < 2 or latents.shape[-1] != cfg.enc_dim:
        raise ShapeError(f"decode: latents of shape {latents.shape} do not end in enc_dim={cfg.enc_dim}")
    lead = latents.shape[:-2]
    x = apply_linear(model.params, "dec_embed", latents)
    if plan is None:
        if latents.shape[-2] != grid.num_patches:
            raise ShapeError(f"decode: {latents.shape[-2]} latents without a mask plan; expected {grid.num_patches}")
    else:
        keep, restore, _ = stack_plans(plan)
        if keep.shape[-1] != latents.shape[-2]:
            raise ShapeError(f"decode: plan keeps {keep.shape[-1]} patches but got {latents.shape[-2]} latents")
        n_masked = grid.num_patches - keep.shape[-1]
        if n_masked:
            tokens = ag.expand(model.params["mask_token"], lead + (n_masked, cfg.dec_dim))
            x = ag.concat([x, tokens], axis=-2)
        x = ag.gather_rows(x, restore)
    x = x + model.dec_pos.astype(x.dtype)
    for i in range(cfg.dec_depth):
        x = transformer_block(model.params, f"dec.{i}", x, cfg.dec_heads)
    x = apply_norm(model.params, "dec_norm", x)
    return apply_linear(model.params, "pred_head", x)


def generate(model: GeneratorModel, cloudy, training: bool = False) -> Tensor:
    """Cloudy image(s) ``[..., 3, S, S]`` -> predicted clean image(s).

    In evaluation mode the output is clamped to [0, 1]; training mode keeps
    raw values so gradients flow everywhere.
    """
    x = _as_input(model, cloudy)
    patches = patchify(x, model.grid)
    out = unpatchify(decode(model, encode(model, patches)), model.grid)
    if not training:
        out = ag.clip(out, 0.0, 1.0)
    return out


def masked_plans(batch_shape: tuple[int, ...], num_patches: int, mask_ratio: float, seed: int):
    if not batch_shape:
        return make_mask_plan(num_patches, mask_ratio, seed)
    count = int(np.prod(batch_shape))
    if len(batch_shape) > 1:
        raise ShapeError("reconstruct supports at most one batch axis")
    return [make_mask_plan(num_patches, mask_ratio, seed + b) for b in range(count)]


def reconstruct(model: GeneratorModel, image, mask_ratio: float, seed: int):
    """Masked-autoencoding pass: returns ``(prediction [..., P, patch_dim], plan)``.

    Batched input gets one plan per sample, seeded ``seed + b``.
    """
    x = _as_input(model, image)
    patches = patchify(x, model.grid)
    plan = masked_plans(patches.shape[:-2], model.grid.num_patches, mask_ratio, seed)
    latents = encode(model, patches, plan)
    return decode(model, latents, plan), plan


def zero_residual_branches(model: GeneratorModel) -> GeneratorModel:
    """Copy of ``model`` whose attention and MLP branches output exactly zero."""
    clone = model.copy()
    for name, p in clone.params.items():
        if ".attn.proj." in name or ".mlp.fc2." in name:
            p.data = np.zeros_like(p.data)
    return clone
