import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from vdp.metrics import iou, psnr, ssim


def test_psnr_identical_capped(rng):
    a = rng.random((16, 16, 3))
    assert psnr(a, a) == 99.0


def test_psnr_closed_form():
    assert psnr(np.full((8, 8, 3), 0.5), np.zeros((8, 8, 3))) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_sequence_is_mean_over_frames():
    a = np.zeros((2, 8, 8, 3))
    b = np.stack([np.full((8, 8, 3), 0.5), np.full((8, 8, 3), 0.1)])
    assert psnr(a, b) == pytest.approx((10 * np.log10(4) + 10 * np.log10(100)) / 2)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


def test_ssim_identical(rng):
    a = rng.random((16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0)


def test_ssim_constant_closed_form():
    c1 = 0.01 ** 2
    assert ssim(np.full((16, 16, 3), 0.5), np.zeros((16, 16, 3))) == pytest.approx(c1 / (0.25 + c1), rel=1e-9)


def test_ssim_matches_skimage(rng):
    a = rng.random((32, 40, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a.mean(-1), b.mean(-1), data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, full=True)[1][5:-5, 5:-5].mean()
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_small_frame_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_iou_examples():
    m = np.zeros((2, 8, 8), bool)
    m[:, :, :4] = True
    assert iou(m, m) == 1.0
    assert iou(m, ~m) == 0.0
    empty = np.zeros((1, 8, 8), bool)
    assert iou(empty, empty) == 1.0
    with pytest.raises(ValueError):
        iou(np.full((8, 8), 0.5), m[0])


def test_psnr_decreases_with_noise(rng):
    a = rng.uniform(0.2, 0.8, (32, 32, 3))
    u = rng.uniform(-1, 1, a.shape)
    vals = [psnr(a, a + amp * u) for amp in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_symmetry(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((12, 12, 3)), r.random((12, 12, 3))
    assert psnr(a, b) == pytest.approx(psnr(b, a))
    assert ssim(a, b) == pytest.approx(ssim(b, a))
    ma, mb = r.random((12, 12)) > 0.5, r.random((12, 12)) > 0.5
    assert iou(ma, mb) == iou(mb, ma)
    assert -1.0 <= ssim(a, b) <= 1.0
