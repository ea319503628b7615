import pytest

from pgcr.config import SEED_ENV, RunConfig, env_seed, resolve
from pgcr.exceptions import ConfigError
from pgcr.generator import GeneratorConfig
from pgcr.training import TrainConfig


def test_toy_preset_matches_generator_defaults():
    cfg = RunConfig.from_preset("toy")
    assert cfg.generator_config() == GeneratorConfig.toy()
    assert cfg.discriminator_config().hidden_dims == (512, 256)


def test_paper_preset():
    cfg = RunConfig.from_preset("paper")
    assert cfg.generator_config() == GeneratorConfig.paper()
    assert cfg.discriminator_config().layer_dims[0] == (768, 512)


def test_train_config_defaults():
    assert RunConfig().train_config() == TrainConfig()


def test_unknown_key():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_mapping({"bogus": 1})


def test_type_coercion():
    cfg = RunConfig.from_mapping({"epochs": "5", "lambda_adv": "0.5", "data": "x"})
    assert (cfg.epochs, cfg.lambda_adv, cfg.data) == (5, 0.5, "x")
    with pytest.raises(ConfigError, match="expects int"):
        RunConfig.from_mapping({"epochs": "five"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"epochs": 2.5})


@pytest.mark.parametrize(
    "key, value",
    [("epochs", -1), ("batch_size", 0), ("base_lr", 0), ("lambda_adv", -0.1), ("llrd_decay", 1.5), ("mask_ratio", 1.0)],
)
def test_range_validation(key, value):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({key: value})


def test_invalid_geometry_reported_as_config_error():
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"image_size": 60}).grid
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"enc_heads": 3}).generator_config()
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"disc_hidden": "a,b"}).discriminator_config()


def test_preset_key_resets_geometry():
    cfg = RunConfig.from_mapping({"preset": "paper", "epochs": 1}, RunConfig.from_mapping({"enc_dim": 128}))
    assert cfg.enc_dim == 1024 and cfg.epochs == 1


def test_file_round_trip(tmp_path):
    cfg = RunConfig.from_mapping({"epochs": 7, "disc_hidden": "64", "base_lr": 3e-4})
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    assert RunConfig.from_file(path) == cfg


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "none.cfg")


def test_env_seed():
    assert env_seed({}) is None
    assert env_seed({SEED_ENV: " "}) is None
    assert env_seed({SEED_ENV: "42"}) == 42
    with pytest.raises(ConfigError):
        env_seed({SEED_ENV: "x"})


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed=1\nepochs=4\nbatch_size=2\n")
    env = {SEED_ENV: "2"}
    assert resolve(path, environ={}).seed == 1
    assert resolve(path, environ=env).seed == 2
    cfg = resolve(path, {"seed": 3, "epochs": None}, environ=env)
    assert (cfg.seed, cfg.epochs, cfg.batch_size) == (3, 4, 2)
    assert resolve(None, preset="paper", environ={}).image_size == 224
