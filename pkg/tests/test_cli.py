import csv
import json

import numpy as np
import pytest

from pgcr import checkpoint
from pgcr.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from pgcr.fileio import read_rgb, write_image
from pgcr.generator import GeneratorConfig, init_generator
from pgcr.patches import PatchGrid


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--count", "10", "--seed", "3"]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def finetuned(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("ft")
    argv = ["finetune", "--data", str(data), "--init", "random", "--out", str(out), "--epochs", "1", "--batch-size", "4"]
    assert main(argv + ["--set", "disc_hidden=16"]) == EXIT_OK
    return out


def test_gen_data_layout_and_split(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--count", "50", "--size", "64"]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert [len(manifest[k]) for k in ("train", "val", "test")] == [32, 8, 10]
    assert len(list((tmp_path / "cloud").iterdir())) == 50
    assert len(list((tmp_path / "mask").iterdir())) == 50


def test_gen_data_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        main(["gen-data", "--out", str(root), "--count", "6", "--size", "16", "--seed", "9"])
    assert tree_bytes(a) == tree_bytes(b)


def test_gen_data_zero_coverage(tmp_path):
    main(["gen-data", "--out", str(tmp_path), "--count", "5", "--size", "16", "--coverage", "0"])
    for path in (tmp_path / "cloud").iterdir():
        assert path.read_bytes() == (tmp_path / "label" / path.name).read_bytes()


def test_env_seed_is_used(tmp_path, monkeypatch):
    monkeypatch.setenv("PGCR_SEED", "9")
    main(["gen-data", "--out", str(tmp_path / "env"), "--count", "5", "--size", "16"])
    monkeypatch.delenv("PGCR_SEED")
    main(["gen-data", "--out", str(tmp_path / "flag"), "--count", "5", "--size", "16", "--seed", "9"])
    assert tree_bytes(tmp_path / "env") == tree_bytes(tmp_path / "flag")


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["gen-data"],
        ["gen-data", "--out", "x", "--coverage", "2"],
        ["finetune", "--data", "x", "--out", "y"],
        ["grad-check", "--preset", "paper"],
        ["grad-check", "--corrupt-op", "nope"],
    ],
)
def test_usage_errors(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_unknown_config_key(data, tmp_path):
    argv = ["pretrain", "--data", str(data), "--out", str(tmp_path), "--set", "epoch=3"]
    assert main(argv) == EXIT_USAGE


def test_missing_out_without_config(data):
    assert main(["pretrain", "--data", str(data)]) == EXIT_USAGE


def test_data_errors(tmp_path, data):
    assert main(["eval", "--data", str(tmp_path / "none"), "--checkpoint", "x", "--report", str(tmp_path)]) == EXIT_DATA
    argv = ["eval", "--data", str(data), "--checkpoint", str(tmp_path / "no.ckpt"), "--report", str(tmp_path)]
    assert main(argv) == EXIT_DATA
    (tmp_path / "junk.ckpt").write_bytes(b"nonsense")
    argv = ["infer", "--checkpoint", str(tmp_path / "junk.ckpt"), "--in", "a.png", "--out", "b.png"]
    assert main(argv) == EXIT_DATA


def test_pretrain_then_finetune_from_checkpoint(data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data={data}\nout={tmp_path / 'pre'}\npretrain_epochs=1\n")
    assert main(["pretrain", "--config", str(cfg), "--mask-ratio", "0.5"]) == EXIT_OK
    ckpt = checkpoint.read(tmp_path / "pre" / "pretrained.ckpt")
    assert ckpt.kind == "generator" and ckpt.config["mask_ratio"] == "0.5"
    assert [r["epoch"] for r in read_csv(tmp_path / "pre" / "pretrain_loss.csv")] == ["1"]
    argv = ["finetune", "--config", str(cfg), "--init", str(tmp_path / "pre" / "pretrained.ckpt"), "--out", str(tmp_path / "ft")]
    assert main(argv + ["--epochs", "1", "--set", "disc_hidden=16"]) == EXIT_OK
    assert checkpoint.read(tmp_path / "ft" / "generator.ckpt").config["init"] == "pretrained.ckpt"


def test_finetune_grid_mismatch(data, tmp_path):
    small = init_generator(GeneratorConfig(PatchGrid(32, 8, 3)), 0)
    checkpoint.save(small, tmp_path / "small.ckpt")
    argv = ["finetune", "--data", str(data), "--init", str(tmp_path / "small.ckpt"), "--out", str(tmp_path / "o")]
    assert main(argv) == EXIT_DATA


def test_finetune_outputs(finetuned):
    assert {p.name for p in finetuned.iterdir()} >= {"generator.ckpt", "discriminator.ckpt", "history.csv", "train_log.csv"}
    history = read_csv(finetuned / "history.csv")
    assert list(history[0]) == ["epoch", "mse", "g_adv", "d_loss", "val_psnr", "val_ssim"]
    assert list(read_csv(finetuned / "train_log.csv")[0]) == ["step", "mse", "g_adv", "d_loss", "g_total"]


def test_finetune_history_is_byte_identical(data, finetuned, tmp_path):
    argv = ["finetune", "--data", str(data), "--init", "random", "--out", str(tmp_path), "--epochs", "1", "--batch-size", "4"]
    assert main(argv + ["--set", "disc_hidden=16"]) == EXIT_OK
    for name in ("history.csv", "train_log.csv", "generator.ckpt"):
        assert (tmp_path / name).read_bytes() == (finetuned / name).read_bytes()


def test_eval_report(data, finetuned, tmp_path):
    argv = ["eval", "--data", str(data), "--checkpoint", str(finetuned / "generator.ckpt"), "--report", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = read_csv(tmp_path / "report.csv")
    assert len(rows) == 2
    assert list(rows[0]) == ["filename", "psnr", "ssim", "baseline_psnr", "baseline_ssim"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["model"]["count"] == 2 and report["split"] == "test"


def test_eval_baseline_inf_on_clear_sky(finetuned, tmp_path):
    clear = tmp_path / "clear"
    main(["gen-data", "--out", str(clear), "--count", "10", "--coverage", "0"])
    argv = ["eval", "--data", str(clear), "--checkpoint", str(finetuned / "generator.ckpt"), "--report", str(tmp_path / "r")]
    assert main(argv) == EXIT_OK
    rows = read_csv(tmp_path / "r" / "report.csv")
    assert all(r["baseline_psnr"] == "inf" and float(r["baseline_ssim"]) == 1.0 for r in rows)
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["baseline"]["inf_psnr_count"] == 2


def test_infer(finetuned, tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (80, 70, 3), dtype=np.uint8)
    write_image(tmp_path / "in.png", img)
    ckpt = str(finetuned / "generator.ckpt")
    for name in ("a.png", "b.png"):
        assert main(["infer", "--checkpoint", ckpt, "--in", str(tmp_path / "in.png"), "--out", str(tmp_path / name)]) == EXIT_OK
    assert read_rgb(tmp_path / "a.png").shape == (64, 64, 3)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_infer_too_small(finetuned, tmp_path):
    write_image(tmp_path / "tiny.png", np.zeros((32, 90, 3), np.uint8))
    argv = ["infer", "--checkpoint", str(finetuned / "generator.ckpt"), "--in", str(tmp_path / "tiny.png"), "--out", str(tmp_path / "o.png")]
    assert main(argv) == EXIT_DATA


def test_grad_check_detects_corrupted_backward(capsys):
    assert main(["grad-check", "--coords", "1", "--corrupt-op", "gelu"]) == EXIT_VERIFY
    out = capsys.readouterr().out
    assert "gelu" in out and "FAIL" in out
