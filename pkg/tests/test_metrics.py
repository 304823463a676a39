import numpy as np
import pytest
from skimage.metrics import structural_similarity

from oracles import psnr_reference, ssim_reference
from raindropsep.metrics import PSNR_CAP, evaluate_pairs, psnr, ssim


def full(v, shape=(3, 16, 16)):
    return np.full(shape, v, dtype=np.float64)


def test_psnr_examples():
    assert psnr(full(0.3), full(0.3)) == PSNR_CAP == 99.0
    assert psnr(full(0.0), full(0.5)) == pytest.approx(6.0206, abs=1e-4)
    assert psnr(full(0.0), full(0.5)) == pytest.approx(10 * np.log10(4), rel=1e-12)
    assert psnr(full(0.0), full(1.0)) == 0.0


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        psnr(full(0.0), full(0.0, (3, 16, 15)))


def test_psnr_monotone_in_gap():
    values = [psnr(full(0.1), full(0.1 + g)) for g in (0.01, 0.05, 0.2, 0.6)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_ssim_identical_is_one():
    a = np.random.default_rng(0).random((3, 24, 24))
    assert ssim(a, a) == 1.0


def test_ssim_constant_images():
    # constant inputs: only the luminance stabiliser survives
    c1 = 0.01 ** 2
    expected = ssim_reference(full(0.0), full(1.0))
    assert expected == pytest.approx(c1 / (1 + c1), rel=1e-12)
    assert ssim(full(0.0), full(1.0)) == pytest.approx(expected, abs=1e-12)


def test_ssim_tiny_noise():
    rng = np.random.default_rng(1)
    a = rng.random((3, 32, 32))
    b = a + rng.normal(0, 1e-4, a.shape)
    assert ssim(a, b) > 0.999


def test_ssim_too_small():
    with pytest.raises(ValueError, match="window"):
        ssim(full(0.0, (3, 10, 20)), full(0.0, (3, 10, 20)))


def test_ssim_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.random((3, 20, 20)), rng.random((3, 20, 20))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9
    assert psnr(a, b) == psnr(b, a)


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 24, 24))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert abs(psnr(a, b) - psnr_reference(a, b)) <= 1e-6
    assert abs(ssim(a, b) - ssim_reference(a, b)) <= 1e-4


def test_ssim_agrees_with_skimage_gaussian_variant():
    rng = np.random.default_rng(5)
    a = rng.random((3, 32, 32))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = structural_similarity(a, b, channel_axis=0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    # skimage averages over the window-cropped map the same way
    assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_evaluate_pairs():
    outs = [full(0.0), full(0.2)]
    truths = [full(0.5), full(0.2)]
    rep = evaluate_pairs(outs, truths)
    assert rep.count == 2
    assert rep.psnr_db == pytest.approx((6.0206 + 99.0) / 2, abs=1e-4)
    table = rep.table(["a.png", "b.png"])
    lines = table.strip().split("\n")
    assert lines[0] == "name\tpsnr\tssim"
    assert lines[1].startswith("a.png\t6.0206")
    assert lines[-1].startswith("mean\t")
    with pytest.raises(ValueError):
        evaluate_pairs(outs, truths[:1])
