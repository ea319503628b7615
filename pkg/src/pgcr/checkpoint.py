"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PGCR"                      magic
    u32                          format version
    u32 + utf-8                  model kind ("generator" | "discriminator")
    u32 + utf-8                  config snapshot, canonical key=value lines
    u32                          tensor count
    per tensor:
        u32 + utf-8              name
        u32                      rank
        u64 * rank               dims
        f32 * prod(dims)         data, row-major
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discriminator import DiscriminatorConfig, init_discriminator
from .exceptions import CheckpointError, ConfigError, ShapeError
from .fileio import atomic_write_bytes
from .generator import GeneratorConfig, init_generator
from .layers import ParamModel

MAGIC = b"PGCR"
VERSION = 1
KINDS = {"generator": (GeneratorConfig, init_generator), "discriminator": (DiscriminatorConfig, init_discriminator)}


def format_kv(values: dict) -> str:
    """Canonical ``key=value`` text: sorted keys, one per line, trailing newline."""
    lines = []
    for key in sorted(values):
        text = str(values[key])
        if "\n" in text or "=" in str(key):
            raise ConfigError(f"cannot serialise {key!r}={text!r} as a key=value line")
        lines.append(f"{key}={text}")
    return "".join(line + "\n" for line in lines)


def parse_kv(text: str, source: str = "<text>") -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass
class Checkpoint:
    kind: str
    config: dict[str, str]
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    version: int = VERSION

    def to_model(self) -> ParamModel:
        if self.kind not in KINDS:
            raise CheckpointError(f"unknown model kind {self.kind!r}")
        config_cls, init = KINDS[self.kind]
        try:
            config = config_cls.from_dict(self.config)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{self.kind} checkpoint has an unusable config snapshot: {exc}") from exc
        model = init(config, 0)
        try:
            model.load_state_dict(self.tensors)
        except ShapeError as exc:
            raise CheckpointError(f"{self.kind} checkpoint does not match its own config: {exc}") from exc
        return model


def _pack_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def encode(kind: str, config: dict, tensors) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _pack_str(buf, kind)
    _pack_str(buf, format_kv(config))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        _pack_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{self.source}: invalid utf-8 at byte {self.pos}") from exc


def decode(data: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, source)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version} (this build reads {VERSION})")
    kind = r.text()
    config = parse_kv(r.text(), source)
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(r.u32()):
        name = r.text()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes after the last tensor")
    return Checkpoint(kind, config, tensors, version)


def model_config(model: ParamModel, extra: dict | None = None) -> dict:
    config = dict(model.config.to_dict())
    for key, value in (extra or {}).items():
        if key in config:
            raise ConfigError(f"extra snapshot key {key!r} collides with a model config key")
        config[key] = value
    return config


def save(model: ParamModel, path, extra: dict | None = None) -> None:
    """Write ``model`` atomically; ``extra`` entries join the config snapshot."""
    atomic_write_bytes(path, encode(model.kind, model_config(model, extra), model.state_dict()))


def read(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data, str(path))


def load(path, kind: str | None = None) -> ParamModel:
    ckpt = read(path)
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {ckpt.kind}")
    return ckpt.to_model()
