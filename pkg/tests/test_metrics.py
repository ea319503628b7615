import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from pgcr.exceptions import ShapeError
from pgcr.metrics import MetricReport, gaussian_window, image_mse, psnr, ssim, ssim_map


def rand_img(seed, h=16, w=16):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)


def reference_ssim(x, y):
    return structural_similarity(
        x, y, data_range=255, channel_axis=-1, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )


def brute_mse(x, y):
    h, w, c = x.shape
    per_channel = []
    for k in range(c):
        total = 0
        for i in range(h):
            for j in range(w):
                d = int(x[i, j, k]) - int(y[i, j, k])
                total += d * d
        per_channel.append(total / (h * w))
    return sum(per_channel) / c


def test_mse_identity_and_offset():
    x = rand_img(0) // 2
    assert image_mse(x, x) == 0
    assert image_mse(x, x + 16) == 256.0


def test_mse_matches_brute_force():
    for seed in range(5):
        x, y = rand_img(seed, 4, 4), rand_img(seed + 100, 4, 4)
        assert image_mse(x, y) == brute_mse(x, y)


def test_psnr_identical_is_inf():
    x = rand_img(1)
    assert psnr(x, x) == math.inf


def test_psnr_constant_offset():
    x = np.full((8, 8, 3), 100, np.uint8)
    expect = float(10 * mpmath.log10(mpmath.mpf(65025) / 256))
    assert psnr(x, x + 16) == pytest.approx(expect, abs=1e-12)
    assert psnr(x, x + 16) == pytest.approx(24.0484, abs=1e-3)


def test_psnr_symmetric():
    x, y = rand_img(2), rand_img(3)
    assert psnr(x, y) == psnr(y, x)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(rand_img(0, 8, 8), rand_img(0, 8, 9))
    with pytest.raises(ShapeError):
        ssim(rand_img(0, 10, 10), rand_img(0, 10, 10))


def test_window_normalised_and_symmetric():
    w = gaussian_window()
    assert w.shape == (11,)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(w, w[::-1])


def test_ssim_identical_is_one():
    x = rand_img(4, 32, 32)
    assert abs(ssim(x, x) - 1.0) <= 1e-9


def test_ssim_zero_variance_closed_form():
    x = np.zeros((16, 16, 3), np.uint8)
    y = np.full((16, 16, 3), 255, np.uint8)
    c1 = (mpmath.mpf("0.01") * 255) ** 2
    expect = float(c1 / (mpmath.mpf(255) ** 2 + c1))
    assert ssim(x, y) == pytest.approx(expect, rel=1e-9)
    assert expect == pytest.approx(1e-4, rel=1e-3)


def test_ssim_map_shape():
    assert ssim_map(rand_img(0, 20, 30), rand_img(1, 20, 30)).shape == (10, 20, 3)


@pytest.mark.parametrize("seed", range(10))
def test_ssim_matches_reference_16(seed):
    x, y = rand_img(seed), rand_img(seed + 50)
    assert abs(ssim(x, y) - reference_ssim(x, y)) <= 1e-6


def test_ssim_matches_reference_on_correlated_images():
    x = rand_img(7, 40, 33)
    noise = np.random.default_rng(8).integers(-20, 21, x.shape)
    y = np.clip(x.astype(int) + noise, 0, 255).astype(np.uint8)
    assert abs(ssim(x, y) - reference_ssim(x, y)) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, (12, 12, 3)))
def test_self_similarity_property(x):
    assert abs(ssim(x, x) - 1.0) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, (12, 12, 3)), arrays(np.uint8, (12, 12, 3)))
def test_ssim_symmetric_and_bounded(x, y):
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1.0 <= s <= 1.0


def test_report_excludes_inf_from_mean():
    report = MetricReport()
    x, y = rand_img(0), rand_img(1)
    report.add("same", x, x)
    report.add("diff", x, y)
    assert report.inf_psnr_count == 1
    assert report.mean_psnr == psnr(x, y)
    assert report.mean_ssim == pytest.approx((1.0 + ssim(x, y)) / 2)
    assert report.summary()["count"] == 2
    assert [r["filename"] for r in report.rows()] == ["same", "diff"]


def test_report_all_inf():
    report = MetricReport()
    report.add("a", rand_img(0), rand_img(0))
    assert math.isnan(report.mean_psnr)
