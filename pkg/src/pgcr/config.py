"""Flat ``key=value`` run configuration with presets and overrides."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .checkpoint import format_kv, parse_kv
from .discriminator import DiscriminatorConfig
from .exceptions import ConfigError, ShapeError
from .generator import GeneratorConfig
from .patches import PatchGrid
from .training import TrainConfig

SEED_ENV = "PGCR_SEED"

PRESETS = {
    "toy": dict(image_size=64, patch_size=8, enc_dim=64, enc_depth=2, enc_heads=4, dec_dim=32, dec_depth=1, dec_heads=4),
    "paper": dict(
        image_size=224, patch_size=16, enc_dim=1024, enc_depth=24, enc_heads=16, dec_dim=512, dec_depth=8, dec_heads=16
    ),
}


@dataclass(frozen=True)
class RunConfig:
    preset: str = "toy"
    image_size: int = 64
    patch_size: int = 8
    channels: int = 3
    enc_dim: int = 64
    enc_depth: int = 2
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 1
    dec_heads: int = 4
    disc_hidden: str = "512,256"
    lambda_adv: float = TrainConfig.lambda_adv
    base_lr: float = TrainConfig.base_lr
    llrd_decay: float = TrainConfig.llrd_decay
    disc_lr: float = TrainConfig.disc_lr
    batch_size: int = TrainConfig.batch_size
    mask_ratio: float = TrainConfig.mask_ratio
    pretrain_lr: float = TrainConfig.pretrain_lr
    pretrain_batch_size: int = TrainConfig.pretrain_batch_size
    pretrain_epochs: int = 10
    epochs: int = 30
    seed: int = 0
    data: str = ""
    out: str = ""

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        for name in ("epochs", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("batch_size", "pretrain_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("base_lr", "disc_lr", "pretrain_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lambda_adv < 0:
            raise ConfigError(f"lambda_adv must be >= 0, got {self.lambda_adv}")
        if not 0 < self.llrd_decay <= 1:
            raise ConfigError(f"llrd_decay must lie in (0, 1], got {self.llrd_decay}")
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_preset(cls, name: str = "toy") -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(preset=name, **PRESETS[name])

    @classmethod
    def from_mapping(cls, values: dict, base: "RunConfig | None" = None) -> "RunConfig":
        """Apply string or typed values on top of ``base`` (or the named preset).

        A ``preset`` key swaps in that preset's geometry first; every other
        key then overrides it.
        """
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if "preset" in values:
            base = cls.from_preset(str(values["preset"]))
        elif base is None:
            base = cls()
        types = {f.name: f.type for f in fields(cls)}
        parsed = {}
        for key, value in values.items():
            parsed[key] = _coerce(key, value, types[key])
        try:
            return replace(base, **parsed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(parse_kv(text, str(path)), base)

    def to_text(self) -> str:
        return format_kv(asdict(self))

    @property
    def grid(self) -> PatchGrid:
        try:
            return PatchGrid(self.image_size, self.patch_size, self.channels)
        except ShapeError as exc:
            raise ConfigError(f"invalid grid: {exc}") from exc

    def generator_config(self) -> GeneratorConfig:
        try:
            return GeneratorConfig(
                self.grid, self.enc_dim, self.enc_depth, self.enc_heads, self.dec_dim, self.dec_depth, self.dec_heads
            )
        except ShapeError as exc:
            raise ConfigError(f"invalid generator settings: {exc}") from exc

    def discriminator_config(self) -> DiscriminatorConfig:
        try:
            return DiscriminatorConfig.from_dict({**self.grid_dict(), "hidden_dims": self.disc_hidden})
        except ValueError as exc:
            raise ConfigError(f"invalid discriminator settings: {exc}") from exc

    def grid_dict(self) -> dict:
        return {"image_size": self.image_size, "patch_size": self.patch_size, "channels": self.channels}

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda_adv=self.lambda_adv,
            base_lr=self.base_lr,
            llrd_decay=self.llrd_decay,
            disc_lr=self.disc_lr,
            batch_size=self.batch_size,
            seed=self.seed,
            mask_ratio=self.mask_ratio,
            pretrain_lr=self.pretrain_lr,
            pretrain_batch_size=self.pretrain_batch_size,
        )


def _coerce(key: str, value, type_name):
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {kind}, got {value!r}") from None


def env_seed(environ=None) -> int | None:
    """The ``PGCR_SEED`` override, or ``None`` when unset or empty."""
    raw = (os.environ if environ is None else environ).get(SEED_ENV, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def resolve(config_path=None, overrides: dict | None = None, preset: str | None = None, environ=None) -> RunConfig:
    """Preset, then config file, then ``PGCR_SEED``, then explicit overrides."""
    cfg = RunConfig.from_preset(preset or "toy")
    if config_path is not None:
        cfg = RunConfig.from_file(config_path, cfg)
    seed = env_seed(environ)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if overrides:
        cfg = RunConfig.from_mapping(overrides, cfg)
    return cfg
