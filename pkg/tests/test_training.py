import math

import numpy as np
import pytest

from pgcr import autograd as ag
from pgcr.data import gen_synthetic_dataset, normalize
from pgcr.discriminator import DiscriminatorConfig, init_discriminator
from pgcr.exceptions import DataError
from pgcr.generator import GeneratorConfig, generate, init_generator
from pgcr.losses import mse_loss
from pgcr.optim import adam_step
from pgcr.patches import PatchGrid
from pgcr.training import (
    TrainConfig,
    discriminator_state,
    discriminator_update,
    evaluate_pairs,
    finetune,
    gan_train_step,
    generator_state,
    generator_update,
    pretrain,
    pretrain_epoch,
    stack_batch,
)

GRID = PatchGrid(16, 4, 3)


def small_models(seed=0):
    gen = init_generator(GeneratorConfig(GRID, 16, 1, 2, 8, 1, 2), seed)
    disc = init_discriminator(DiscriminatorConfig(GRID, (8,)), seed + 1)
    return gen, disc


@pytest.fixture(scope="module")
def split():
    return gen_synthetic_dataset(20, 16, seed=0)


def grads_all_zero(model):
    return all(p.grad is None or not np.any(p.grad) for p in model.parameters())


def test_discriminator_update_leaves_generator_untouched(split):
    gen, disc = small_models()
    cloudy, clean = stack_batch(split.train[:4], GRID)
    gen.zero_grad()
    before = gen.state_dict()
    fake = generate(gen, cloudy, training=True)
    discriminator_update(disc, fake.data, clean, discriminator_state(disc, TrainConfig()))
    assert grads_all_zero(gen)
    assert all(np.array_equal(before[k], gen[k].data) for k in before)


def test_generator_update_leaves_discriminator_untouched(split):
    gen, disc = small_models()
    cloudy, clean = stack_batch(split.train[:4], GRID)
    disc.zero_grad()
    before = disc.state_dict()
    generator_update(gen, disc, cloudy, clean, generator_state(gen, TrainConfig()))
    assert grads_all_zero(disc)
    assert all(np.array_equal(before[k], disc[k].data) for k in before)
    assert all(p.requires_grad for p in disc.parameters())


def test_train_step_updates_both(split):
    gen, disc = small_models()
    g0, d0 = gen.state_dict(), disc.state_dict()
    cfg = TrainConfig()
    report = gan_train_step(gen, disc, split.train[:4], generator_state(gen, cfg), discriminator_state(disc, cfg))
    assert not np.array_equal(g0["pred_head.weight"], gen["pred_head.weight"].data)
    assert not np.array_equal(d0["layers.0.weight"], disc["layers.0.weight"].data)
    assert report.gan_total == report.d_loss + report.g_adv
    assert report.g_total == pytest.approx(report.mse + 0.1 * report.g_adv)


def test_zero_lambda_reduces_to_mse(split):
    cfg = TrainConfig(lambda_adv=0.0)
    cloudy, clean = stack_batch(split.train[:4], GRID)
    gen_a, disc = small_models()
    generator_update(gen_a, disc, cloudy, clean, generator_state(gen_a, cfg))

    # a plain MSE step with the same optimiser settings
    gen_b, _ = small_models()
    state = generator_state(gen_b, cfg)
    gen_b.zero_grad()
    ag.backward(mse_loss(generate(gen_b, cloudy, training=True), clean))
    adam_step(state, state.groups)
    for k in gen_a.params:
        np.testing.assert_array_equal(gen_a[k].data, gen_b[k].data)


def test_finetune_is_deterministic(split):
    runs = []
    for _ in range(2):
        gen, disc = small_models()
        runs.append(finetune(gen, disc, split.train, split.val, 2, TrainConfig(batch_size=4)))
    assert runs[0].history == runs[1].history
    assert runs[0].train_log == runs[1].train_log


def test_finetune_history_and_best_checkpoint(split):
    gen, disc = small_models()
    result = finetune(gen, disc, split.train, split.val, 3, TrainConfig(batch_size=4))
    assert [r["epoch"] for r in result.history] == [1, 2, 3]
    assert len(result.train_log) == 3 * math.ceil(len(split.train) / 4)
    best = max(r["val_psnr"] for r in result.history)
    assert result.best_val_psnr == best
    assert result.history[result.best_epoch - 1]["val_psnr"] == best
    report, _, _ = evaluate_pairs(result.best_generator, split.val)
    assert report.mean_psnr == best


def test_finetune_zero_epochs(split):
    gen, disc = small_models()
    before = gen.state_dict()
    result = finetune(gen, disc, split.train, split.val, 0, TrainConfig())
    assert result.history == [] and result.best_epoch == 0
    assert all(np.array_equal(before[k], result.best_generator[k].data) for k in before)


def test_finetune_needs_data(split):
    gen, disc = small_models()
    with pytest.raises(DataError):
        finetune(gen, disc, split.train, [], 1, TrainConfig())


def test_pretrain_reduces_loss_and_is_deterministic(split):
    losses = []
    for _ in range(2):
        gen, _ = small_models()
        losses.append(pretrain(gen, split.train, 3, TrainConfig(pretrain_lr=3e-3)))
    assert losses[0] == losses[1]
    assert losses[0][-1] < losses[0][0]


def test_pretrain_epoch_validates(split):
    gen, _ = small_models()
    state = generator_state(gen, TrainConfig())
    with pytest.raises(ValueError):
        pretrain_epoch(gen, split.train, 1.0, state)
    with pytest.raises(DataError):
        pretrain_epoch(gen, [], 0.75, state)


def test_evaluate_baseline_only(split):
    model, baseline, mse = evaluate_pairs(None, split.test)
    assert len(model) == 0 and len(baseline) == len(split.test)
    assert math.isnan(mse)


def test_evaluate_mse_domain(split):
    gen, _ = small_models()
    _, _, mse = evaluate_pairs(gen, split.test[:2])
    out = generate(gen, normalize(np.stack([p.cloudy for p in split.test[:2]]))).data
    target = normalize(np.stack([p.clean for p in split.test[:2]]))
    assert mse == pytest.approx(float(((out - target) ** 2).mean()), rel=1e-6)
