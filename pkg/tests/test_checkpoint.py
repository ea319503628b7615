import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgcr import checkpoint
from pgcr.checkpoint import MAGIC, decode, encode, format_kv, parse_kv
from pgcr.discriminator import DiscriminatorConfig, discriminate, init_discriminator
from pgcr.exceptions import CheckpointError, ConfigError
from pgcr.generator import GeneratorConfig, generate, init_generator, reconstruct
from pgcr.patches import PatchGrid


@pytest.fixture(scope="module")
def gen():
    return init_generator(GeneratorConfig.toy(), 5)


def test_generator_round_trip_is_bit_identical(gen, tmp_path):
    path = tmp_path / "g.ckpt"
    checkpoint.save(gen, path, {"stage": "test"})
    loaded = checkpoint.load(path, kind="generator")
    assert loaded.config == gen.config
    for k in gen.params:
        assert np.array_equal(gen[k].data, loaded[k].data)
    x = np.random.default_rng(0).random((2, 3, 64, 64)).astype(np.float32)
    assert np.array_equal(generate(gen, x).data, generate(loaded, x).data)
    a, _ = reconstruct(gen, x[0], 0.75, 3)
    b, _ = reconstruct(loaded, x[0], 0.75, 3)
    assert np.array_equal(a.data, b.data)


def test_discriminator_round_trip(tmp_path):
    disc = init_discriminator(DiscriminatorConfig(PatchGrid(32, 8, 3), (16, 4)), 2)
    checkpoint.save(disc, tmp_path / "d.ckpt")
    loaded = checkpoint.load(tmp_path / "d.ckpt")
    assert loaded.config == disc.config
    x = np.random.default_rng(1).random((3, 32, 32)).astype(np.float32)
    assert np.array_equal(discriminate(disc, x).data, discriminate(loaded, x).data)


def test_empty_hidden_discriminator_round_trip(tmp_path):
    disc = init_discriminator(DiscriminatorConfig(PatchGrid(16, 4, 3), ()), 0)
    checkpoint.save(disc, tmp_path / "d.ckpt")
    assert checkpoint.load(tmp_path / "d.ckpt").config.hidden_dims == ()


def test_header_layout(gen):
    data = encode("generator", {"b": 2, "a": 1}, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert data[:4] == MAGIC
    assert struct.unpack("<I", data[4:8])[0] == 1
    ckpt = decode(data)
    assert ckpt.config == {"a": "1", "b": "2"}
    assert ckpt.tensors["w"].tolist() == [[0, 1, 2], [3, 4, 5]]
    # header + kind + config + count + name + rank + dims + payload
    expected = 4 + 4 + (4 + 9) + (4 + 8) + 4 + (4 + 1) + 4 + 16 + 24
    assert len(data) == expected


def test_extra_snapshot_recorded(gen, tmp_path):
    checkpoint.save(gen, tmp_path / "g.ckpt", {"mask_ratio": 0.75})
    ckpt = checkpoint.read(tmp_path / "g.ckpt")
    assert ckpt.config["mask_ratio"] == "0.75"
    assert ckpt.config["enc_dim"] == "64"
    with pytest.raises(ConfigError):
        checkpoint.save(gen, tmp_path / "h.ckpt", {"enc_dim": 3})


def test_bad_magic(gen):
    data = bytearray(encode("generator", gen.config.to_dict(), gen.state_dict()))
    data[:4] = b"XXXX"
    with pytest.raises(CheckpointError, match="magic"):
        decode(bytes(data))


def test_bad_version(gen):
    data = bytearray(encode("generator", gen.config.to_dict(), gen.state_dict()))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointError, match="version 2"):
        decode(bytes(data))


@pytest.mark.parametrize("cut", [3, 10, 100, -1])
def test_truncation(gen, cut):
    data = encode("generator", gen.config.to_dict(), gen.state_dict())
    with pytest.raises(CheckpointError, match="truncated"):
        decode(data[:cut])


def test_trailing_bytes(gen):
    data = encode("generator", gen.config.to_dict(), gen.state_dict())
    with pytest.raises(CheckpointError, match="trailing"):
        decode(data + b"\0")


def test_wrong_kind(gen, tmp_path):
    checkpoint.save(gen, tmp_path / "g.ckpt")
    with pytest.raises(CheckpointError, match="expected a discriminator"):
        checkpoint.load(tmp_path / "g.ckpt", kind="discriminator")


def test_tensor_mismatch_with_config(gen):
    state = gen.state_dict()
    state.pop("mask_token")
    with pytest.raises(CheckpointError):
        decode(encode("generator", gen.config.to_dict(), state)).to_model()
    with pytest.raises(CheckpointError, match="unknown model kind"):
        decode(encode("critic", {}, {})).to_model()


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "nope.ckpt")


def test_save_is_atomic(gen, tmp_path):
    path = tmp_path / "g.ckpt"
    checkpoint.save(gen, path)
    assert [p.name for p in tmp_path.iterdir()] == ["g.ckpt"]


def test_kv_rejects_unserialisable():
    with pytest.raises(ConfigError):
        format_kv({"a": "x\ny"})
    with pytest.raises(ConfigError):
        format_kv({"a=b": 1})


def test_parse_kv_errors():
    assert parse_kv("# note\n\n a = 1 \n") == {"a": "1"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_kv("a=1\na=2")
    with pytest.raises(ConfigError, match="expected key=value"):
        parse_kv("oops")
    with pytest.raises(ConfigError, match="empty key"):
        parse_kv("=3")


@settings(max_examples=30, deadline=None)
@given(
    st.dictionaries(
        st.text("abcdefghij_", min_size=1, max_size=8),
        st.lists(st.integers(0, 4), min_size=0, max_size=3),
        max_size=4,
    ),
    st.integers(0, 1000),
)
def test_encode_decode_round_trip(shapes, seed):
    rng = np.random.default_rng(seed)
    tensors = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in shapes.items()}
    ckpt = decode(encode("generator", {"seed": seed}, tensors))
    assert list(ckpt.tensors) == list(tensors)
    for name, arr in tensors.items():
        assert ckpt.tensors[name].shape == arr.shape
        assert np.array_equal(ckpt.tensors[name], arr)
