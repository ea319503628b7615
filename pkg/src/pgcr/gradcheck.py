"""Finite-difference verification of every differentiable op and the training losses."""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor, finite_diff_check
from .discriminator import DiscriminatorConfig, discriminate, init_discriminator
from .generator import GeneratorConfig, generate, init_generator
from .losses import d_loss, g_adv_loss, mse_loss
from .patches import PatchGrid

TOLERANCE = 1e-3
OP_STEP = 1e-4
# The generator is smooth (GELU) and has small-gradient coordinates that need a
# larger step; the discriminator is piecewise linear with zero-initialised
# biases, so its pre-activations sit near leaky-relu kinks and need a tiny one.
GEN_STEP = 1e-4
DISC_STEP = 1e-6

# builder(rng) -> (f, x): f maps the checked input to a scalar
Case = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], Tensor]]


@dataclass(frozen=True)
class CheckRow:
    name: str
    max_rel_error: float
    coords: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=np.float64)


def _const(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), dtype=np.float64)


def _weighted(y: Tensor, rng) -> Tensor:
    # random projection so every output coordinate matters
    return (y * _const(rng, y.shape)).sum()


def _away_from_zero(rng, shape, margin=0.1) -> Tensor:
    # keeps kinked ops (leaky relu, clip) off their corners
    x = rng.uniform(margin, 1.5, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _unary(op) -> Case:
    def build(rng):
        x = _leaf(rng, (3, 4))
        w = _const(rng, (3, 4))
        return (lambda t: (op(t) * w).sum()), x
    return build


def _binary(op, left: bool, b_shape=(4,)) -> Case:
    def build(rng):
        a, b = _leaf(rng, (3, 4), 0.5, 1.5), _leaf(rng, b_shape, 0.5, 1.5)
        w = _const(rng, (3, 4))
        if left:
            return (lambda t: (op(t, b) * w).sum()), a
        return (lambda t: (op(a, t) * w).sum()), b
    return build


def _case_power(rng):
    x = _leaf(rng, (3, 4), 0.5, 2.0)
    return (lambda t: _weighted(ag.power(t, 2.5), np.random.default_rng(1))), x


def _case_log(rng):
    x = _leaf(rng, (3, 4), 0.2, 2.0)
    return (lambda t: _weighted(ag.log(t), np.random.default_rng(1))), x


def _case_clip(rng):
    x = _leaf(rng, (3, 4), -2.0, 2.0)
    x.data[np.abs(np.abs(x.data) - 1.0) < 0.05] = 0.3
    return (lambda t: _weighted(ag.clip(t, -1.0, 1.0), np.random.default_rng(1))), x


def _case_leaky(rng):
    x = _away_from_zero(rng, (3, 4))
    return (lambda t: _weighted(ag.leaky_relu(t, 0.2), np.random.default_rng(1))), x


def _case_softmax(rng):
    x = _leaf(rng, (2, 3, 5), -2, 2)
    return (lambda t: _weighted(ag.softmax(t, axis=-1), np.random.default_rng(1))), x


def _case_layer_norm(rng):
    x = _leaf(rng, (3, 6), -2, 2)
    gamma, beta = _leaf(rng, (6,), 0.5, 1.5), _leaf(rng, (6,))
    return (lambda t: _weighted(ag.layer_norm(t, gamma, beta), np.random.default_rng(1))), x


def _case_layer_norm_affine(rng):
    x = _const(rng, (3, 6), -2, 2)
    gamma, beta = _leaf(rng, (6,), 0.5, 1.5), _leaf(rng, (6,))
    w = _const(np.random.default_rng(1), (3, 6))
    return (lambda t: (ag.layer_norm(x, t, beta) * w).sum() + (ag.layer_norm(x, gamma, t) * w * w).sum()), gamma


def _case_matmul(rng):
    a = _const(rng, (2, 3, 4))
    b = _leaf(rng, (4, 5))
    c = _const(rng, (5, 4))
    return (lambda t: _weighted(ag.matmul(a, t), np.random.default_rng(1)) + _weighted(ag.matmul(t, c), np.random.default_rng(2))), b


def _case_matmul_batched(rng):
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 5))
    return (lambda t: _weighted(ag.matmul(t, b), np.random.default_rng(1))), a


def _case_reduce(op) -> Case:
    def build(rng):
        x = _leaf(rng, (3, 4, 2))
        return (lambda t: _weighted(op(t, axis=1), np.random.default_rng(1)) + op(t * t)), x
    return build


def _case_reshape(rng):
    x = _leaf(rng, (3, 4))
    return (lambda t: _weighted(ag.reshape(t, (2, 6)), np.random.default_rng(1))), x


def _case_permute(rng):
    x = _leaf(rng, (2, 3, 4))
    return (lambda t: _weighted(ag.permute(t, (2, 0, 1)), np.random.default_rng(1))), x


def _case_getitem(rng):
    x = _leaf(rng, (4, 5))
    rows = np.array([0, 2, 2, 3])
    return (lambda t: _weighted(t[1:3, ::2], np.random.default_rng(1)) + _weighted(t[rows], np.random.default_rng(2))), x


def _case_gather(rng):
    x = _leaf(rng, (2, 6, 3))
    idx = np.array([[5, 0, 2], [1, 1, 4]])
    return (lambda t: _weighted(ag.gather_rows(t, idx), np.random.default_rng(1))), x


def _case_concat(rng):
    x, y = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
    return (lambda t: _weighted(ag.concat([t, y, t], axis=1), np.random.default_rng(1))), x


def _case_expand(rng):
    x = _leaf(rng, (3, 4))
    return (lambda t: _weighted(ag.expand(t, (2, 3, 4)), np.random.default_rng(1))), x


OP_CASES: dict[str, Case] = {
    "add": _binary(ag.add, True, (4,)),
    "add[broadcast]": _binary(ag.add, False, (4,)),
    "sub": _binary(ag.sub, False, (3, 4)),
    "mul": _binary(ag.mul, False, (4,)),
    "div": _binary(ag.div, False, (3, 4)),
    "power": _case_power,
    "exp": _unary(ag.exp),
    "log": _case_log,
    "clip": _case_clip,
    "gelu": _unary(ag.gelu),
    "leaky_relu": _case_leaky,
    "sigmoid": _unary(ag.sigmoid),
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "layer_norm[affine]": _case_layer_norm_affine,
    "matmul": _case_matmul,
    "matmul[batched]": _case_matmul_batched,
    "sum": _case_reduce(ag.tsum),
    "mean": _case_reduce(ag.mean),
    "reshape": _case_reshape,
    "permute": _case_permute,
    "getitem": _case_getitem,
    "gather_rows": _case_gather,
    "concat": _case_concat,
    "expand": _case_expand,
}


def check_ops(seed: int = 0) -> list[CheckRow]:
    rows = []
    for i, (name, build) in enumerate(OP_CASES.items()):
        f, x = build(np.random.default_rng([seed, i]))
        err = finite_diff_check(f, x, h=OP_STEP)
        rows.append(CheckRow(name, err, x.size))
    return rows


def _check_model_params(name: str, model, loss_fn, coords_per_tensor: int, seed: int, h: float) -> CheckRow:
    worst, total = 0.0, 0
    for j, (pname, p) in enumerate(model.named_parameters()):
        n = min(coords_per_tensor, p.size)
        # loss_fn closes over the model, so the perturbed parameter is picked up
        err = finite_diff_check(lambda _t: loss_fn(), p, h=h, max_coords=n, seed=seed + j)
        worst = max(worst, err)
        total += n
    return CheckRow(name, worst, total)


def toy_models(seed: int = 0, grid: PatchGrid | None = None):
    """Float64 toy generator and discriminator plus a cloudy/clean batch."""
    gen_cfg = GeneratorConfig.toy() if grid is None else GeneratorConfig(grid=grid)
    gen = init_generator(gen_cfg, seed).astype(np.float64)
    disc = init_discriminator(DiscriminatorConfig(gen_cfg.grid), seed + 1).astype(np.float64)
    rng = np.random.default_rng(seed + 2)
    cloudy = rng.random((1, *gen_cfg.grid.image_shape))
    clean = rng.random((1, *gen_cfg.grid.image_shape))
    return gen, disc, cloudy, clean


def check_models(seed: int = 0, coords_per_tensor: int = 3, lambda_adv: float = 0.1) -> list[CheckRow]:
    gen, disc, cloudy, clean = toy_models(seed)

    def generator_loss():
        fake = generate(gen, cloudy, training=True)
        return mse_loss(fake, clean) + lambda_adv * g_adv_loss(discriminate(disc, fake))

    fake = generate(gen, cloudy).data

    def discriminator_loss():
        return d_loss(discriminate(disc, clean), discriminate(disc, fake))

    with _frozen_model(disc):
        gen_row = _check_model_params("generator[mse+adv]", gen, generator_loss, coords_per_tensor, seed, GEN_STEP)
    with _frozen_model(gen):
        disc_row = _check_model_params("discriminator[d_loss]", disc, discriminator_loss, coords_per_tensor, seed, DISC_STEP)
    return [gen_row, disc_row]


@contextlib.contextmanager
def _frozen_model(model):
    with ag.frozen(model.parameters()):
        yield


def run(seed: int = 0, coords_per_tensor: int = 3, corrupt_op: str | None = None) -> tuple[list[CheckRow], float]:
    """All op rows then the end-to-end rows, plus elapsed seconds.

    ``corrupt_op`` scales that op's backward pass, which must make the run fail.
    """
    start = time.perf_counter()
    ctx = ag.inject_backward_fault(corrupt_op) if corrupt_op else contextlib.nullcontext()
    with ctx:
        rows = check_ops(seed) + check_models(seed, coords_per_tensor)
    return rows, time.perf_counter() - start


def format_table(rows: list[CheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'max_rel_err':>12}  {'coords':>6}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:>12.3e}  {r.coords:>6}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
