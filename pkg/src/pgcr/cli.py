"""``pgcr`` command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint, gradcheck
from .config import RunConfig, env_seed, resolve
from .data import center_crop_image, gen_synthetic_dataset, load_dataset, save_dataset
from .discriminator import init_discriminator
from .exceptions import CheckpointError, ConfigError, DataError, PGCRError, ShapeError
from .fileio import image_size, read_rgb, write_csv, write_image, write_json
from .generator import GeneratorModel, init_generator
from .training import (
    HISTORY_COLUMNS,
    PRETRAIN_LOG_COLUMNS,
    TRAIN_LOG_COLUMNS,
    evaluate_pairs,
    finetune,
    predict_images,
    pretrain,
)

logger = logging.getLogger("pgcr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

PRETRAIN_CKPT = "pretrained.ckpt"
PRETRAIN_LOG = "pretrain_loss.csv"
GENERATOR_CKPT = "generator.ckpt"
DISCRIMINATOR_CKPT = "discriminator.ckpt"
HISTORY_CSV = "history.csv"
TRAIN_LOG_CSV = "train_log.csv"
REPORT_COLUMNS = ["filename", "psnr", "ssim", "baseline_psnr", "baseline_ssim"]


class UsageError(PGCRError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_set(values: list[str] | None) -> dict[str, str]:
    out = {}
    for item in values or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _run_config(args, **flags) -> RunConfig:
    overrides = _parse_set(getattr(args, "set", None))
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return resolve(getattr(args, "config", None), overrides, getattr(args, "preset", None))


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = env_seed()
    return 0 if env is None else env


def _path(flag, configured: str, name: str):
    if flag is not None:
        return flag
    if configured:
        return configured
    raise UsageError(f"{name} is required (as a flag or in the config file)")


def _coverage(text: str) -> float | tuple[float, float]:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"coverage must be a number or lo,hi pair, got {text!r}") from None
    if len(parts) == 1 and 0 <= parts[0] <= 1:
        return parts[0]
    if len(parts) == 2 and 0 <= parts[0] <= parts[1] <= 1:
        return parts[0], parts[1]
    raise argparse.ArgumentTypeError(f"coverage must lie in [0, 1] (or lo,hi with lo <= hi), got {text!r}")


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    split = gen_synthetic_dataset(args.count, args.size, args.coverage, _seed(args))
    try:
        save_dataset(split, args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    train, val, test = split.counts()
    print(f"wrote {args.count} pairs to {args.out} (train {train} / val {val} / test {test})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _run_config(args, pretrain_epochs=args.epochs, mask_ratio=args.mask_ratio, seed=args.seed)
    split = load_dataset(_path(args.data, cfg.data, "--data"))
    out = Path(_path(args.out, cfg.out, "--out"))
    gen = init_generator(cfg.generator_config(), cfg.seed)
    rows = []

    def on_epoch(epoch, loss):
        rows.append({"epoch": epoch, "loss": loss})
        print(f"epoch {epoch}/{cfg.pretrain_epochs} loss {loss:.6f}", flush=True)

    pretrain(gen, split.train, cfg.pretrain_epochs, cfg.train_config(), on_epoch)
    checkpoint.save(gen, out / PRETRAIN_CKPT, {"mask_ratio": cfg.mask_ratio, "stage": "pretrain"})
    write_csv(out / PRETRAIN_LOG, rows, PRETRAIN_LOG_COLUMNS)
    print(f"wrote {out / PRETRAIN_CKPT}")
    return EXIT_OK


def _initial_generator(init: str, cfg: RunConfig) -> GeneratorModel:
    if init == "random":
        return init_generator(cfg.generator_config(), cfg.seed)
    gen = checkpoint.load(init, kind="generator")
    if gen.grid != cfg.grid:
        raise CheckpointError(
            f"checkpoint {init} was trained on grid {gen.grid.describe()} but this run uses {cfg.grid.describe()}"
        )
    return gen


def cmd_finetune(args) -> int:
    cfg = _run_config(
        args,
        epochs=args.epochs,
        lambda_adv=args.lambda_adv,
        base_lr=args.base_lr,
        llrd_decay=args.llrd_decay,
        disc_lr=args.disc_lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    split = load_dataset(_path(args.data, cfg.data, "--data"))
    out = Path(_path(args.out, cfg.out, "--out"))
    gen = _initial_generator(args.init, cfg)
    disc = init_discriminator(cfg.discriminator_config(), cfg.seed + 1)

    def on_epoch(row):
        print(
            f"epoch {row['epoch']}/{cfg.epochs} mse {row['mse']:.5f} g_adv {row['g_adv']:.4f} "
            f"d_loss {row['d_loss']:.4f} val_psnr {row['val_psnr']:.3f} val_ssim {row['val_ssim']:.4f}",
            flush=True,
        )

    result = finetune(gen, disc, split.train, split.val, cfg.epochs, cfg.train_config(), on_epoch)
    extra = {"stage": "finetune", "init": "random" if args.init == "random" else Path(args.init).name}
    checkpoint.save(result.best_generator, out / GENERATOR_CKPT, {**extra, "best_epoch": result.best_epoch})
    checkpoint.save(result.discriminator, out / DISCRIMINATOR_CKPT, extra)
    write_csv(out / HISTORY_CSV, result.history, HISTORY_COLUMNS)
    write_csv(out / TRAIN_LOG_CSV, result.train_log, TRAIN_LOG_COLUMNS)
    if result.history:
        print(f"best epoch {result.best_epoch} val_psnr {result.best_val_psnr:.3f}; wrote {out}")
    else:
        print(f"no epochs run; wrote initial weights to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    split = load_dataset(args.data)
    pairs = getattr(split, args.split)
    if not pairs:
        raise DataError(f"split {args.split!r} of {args.data} is empty")
    gen = checkpoint.load(args.checkpoint, kind="generator")
    model, baseline, _ = evaluate_pairs(gen, pairs)
    rows = [
        {**m, "baseline_psnr": b["psnr"], "baseline_ssim": b["ssim"]}
        for m, b in zip(model.rows(), baseline.rows())
    ]
    report = Path(args.report)
    write_csv(report / "report.csv", rows, REPORT_COLUMNS)
    write_json(
        report / "report.json",
        {
            "checkpoint": str(args.checkpoint),
            "split": args.split,
            "model": model.summary(),
            "baseline": baseline.summary(),
            "rows": rows,
        },
    )
    for name, rep in (("model", model), ("baseline", baseline)):
        print(f"{name:<9} psnr {rep.mean_psnr:8.3f}  ssim {rep.mean_ssim:.4f}  (inf psnr rows: {rep.inf_psnr_count})")
    return EXIT_OK


def cmd_infer(args) -> int:
    gen = checkpoint.load(args.checkpoint, kind="generator")
    size = gen.grid.image_size
    h, w = image_size(args.input)
    if h < size or w < size:
        raise DataError(f"{args.input} is {h}x{w}; the model needs at least {size}x{size}")
    crop = center_crop_image(read_rgb(args.input), size)
    write_image(args.output, predict_images(gen, crop[None])[0])
    print(f"wrote {args.output} ({size}x{size})")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.preset != "toy":
        raise UsageError("grad-check only runs on the toy preset")
    if args.corrupt_op and args.corrupt_op not in _op_names():
        raise UsageError(f"unknown op {args.corrupt_op!r} for --corrupt-op")
    rows, elapsed = gradcheck.run(_seed(args), args.coords, args.corrupt_op)
    print(gradcheck.format_table(rows))
    failed = [r.name for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed in {elapsed:.1f}s")
    return EXIT_VERIFY if failed else EXIT_OK


def _op_names() -> set[str]:
    return {name.split("[")[0] for name in gradcheck.OP_CASES}


# -- parser ----------------------------------------------------------------------

def _add_config_flags(p) -> None:
    p.add_argument("--config", type=Path, help="key=value run configuration file")
    p.add_argument("--preset", choices=["toy", "paper"], help="model geometry preset (default toy)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    p.add_argument("--seed", type=int, help="seed (default: $PGCR_SEED or 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgcr", description="Patch-GAN transfer learning for cloud removal.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic cloudy/clean dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--coverage", type=_coverage, default=(0.3, 0.5), help="fraction or lo,hi range (default 0.3,0.5)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining on clean images")
    p.add_argument("--data", type=Path, help="dataset root (or data= in the config)")
    p.add_argument("--out", type=Path, help="output directory (or out= in the config)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--mask-ratio", type=float)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="adversarial fine-tuning")
    p.add_argument("--data", type=Path, help="dataset root (or data= in the config)")
    p.add_argument("--init", required=True, help="'random' or a generator checkpoint")
    p.add_argument("--out", type=Path, help="output directory (or out= in the config)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda-adv", type=float)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--llrd-decay", type=float)
    p.add_argument("--disc-lr", type=float)
    p.add_argument("--batch-size", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="PSNR/SSIM report against the cloudy-input baseline")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--report", required=True, type=Path, help="output directory for report.csv and report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="remove clouds from one image")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", dest="output", required=True, type=Path)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("grad-check", help="finite-difference check of every op and the training losses")
    p.add_argument("--preset", choices=["toy", "paper"], default="toy")
    p.add_argument("--coords", type=int, default=3, help="sampled coordinates per parameter tensor")
    p.add_argument("--seed", type=int)
    p.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pgcr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ShapeError) as exc:
        print(f"pgcr: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"pgcr: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
