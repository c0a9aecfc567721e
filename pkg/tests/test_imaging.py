import numpy as np
import pytest

from caplab.errors import IngestionError, InvalidInputError
from caplab.imaging import (
    DEFAULT_TAU,
    LUMA_WEIGHTS,
    brightness_map,
    charbonnier,
    load_image,
    psnr,
    save_image,
    ssim,
    threshold_mask,
    to_grayscale,
)
from oracles import charbonnier_oracle, windowed_ssim_oracle


def test_grayscale_weights(rng):
    img = rng.random((9, 13, 3))
    want = (img * np.asarray(LUMA_WEIGHTS)).sum(axis=2)
    assert np.allclose(to_grayscale(img), want, atol=1e-12)


def test_grayscale_passthrough(rng):
    g = rng.random((6, 7))
    assert np.array_equal(to_grayscale(g), g)


def test_brightness_map_peak_normalized(rng):
    img = 0.25 * rng.random((16, 16, 3))
    b = brightness_map(img)
    assert b.max() == pytest.approx(1.0)
    assert b.min() >= 0.0


def test_brightness_map_all_black():
    b = brightness_map(np.zeros((8, 8, 3)))
    assert np.array_equal(b, np.ones((8, 8)))


def test_threshold_mask_binary(rng):
    img = rng.random((12, 12, 3))
    m = threshold_mask(brightness_map(img), DEFAULT_TAU)
    assert set(np.unique(m)).issubset({0.0, 1.0})


def test_threshold_boundary_is_kept():
    b = np.array([[DEFAULT_TAU, DEFAULT_TAU / 2]])
    m = threshold_mask(b, DEFAULT_TAU)
    assert m[0, 0] == 1.0 and m[0, 1] == 0.0


def test_psnr_identical_capped(rng):
    img = rng.random((20, 20, 3))
    assert psnr(img, img) == 100.0


def test_psnr_known_value():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.5)
    # mse 0.25 -> 10*log10(1/0.25)
    assert psnr(a, b) == pytest.approx(10 * np.log10(4.0), abs=1e-10)


def test_psnr_clamps_out_of_range():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 2.0)  # clamps to 1.0
    assert psnr(a, b) == pytest.approx(0.0, abs=1e-10)


def test_ssim_identical(rng):
    img = rng.random((16, 16))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_windowed_oracle(rng):
    x = rng.random((14, 15))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    got = ssim(x, y)
    want = windowed_ssim_oracle(x, y)
    assert got == pytest.approx(want, abs=1e-9)


def test_ssim_color_uses_luminance(rng):
    img = rng.random((16, 16, 3))
    noisy = np.clip(img + 0.05 * rng.standard_normal(img.shape), 0, 1)
    assert ssim(img, noisy) == pytest.approx(
        ssim(to_grayscale(img), to_grayscale(noisy)), abs=1e-12)


def test_ssim_too_small_raises():
    with pytest.raises(InvalidInputError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_charbonnier_identical_is_exactly_eps(rng):
    img = rng.random((16, 16, 3))
    assert charbonnier(img, img, eps=1e-3) == 1e-3


def test_charbonnier_eps_zero_is_mae(rng):
    for _ in range(10):
        x = rng.random((8, 8))
        y = rng.random((8, 8))
        assert charbonnier(x, y, eps=0.0) == pytest.approx(
            np.abs(x - y).mean(), abs=1e-12)


def test_charbonnier_matches_scalar_oracle(rng):
    x = rng.random((6, 6))
    y = rng.random((6, 6))
    assert charbonnier(x, y, eps=1e-3) == pytest.approx(
        charbonnier_oracle(x, y, 1e-3), abs=1e-14)


def test_metric_input_validation():
    with pytest.raises(InvalidInputError):
        psnr(np.zeros((4, 4)), np.zeros((5, 4)))
    with pytest.raises(InvalidInputError):
        psnr(np.full((4, 4), np.nan), np.zeros((4, 4)))
    with pytest.raises(InvalidInputError):
        to_grayscale(np.zeros((4, 4, 2)))


def test_save_load_roundtrip(tmp_path, rng):
    img = rng.random((19, 23, 3))
    p = tmp_path / "x.png"
    save_image(p, img)
    back = load_image(p)
    assert back.shape == img.shape
    # 8-bit quantization is the only loss
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_save_rounds_half_up(tmp_path):
    # 0.5/255 boundary value lands on the upper code
    img = np.full((8, 8, 3), 128.5 / 255.0)
    p = tmp_path / "r.png"
    save_image(p, img)
    assert int(round(load_image(p)[0, 0, 0] * 255)) == 129


def test_load_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_image(tmp_path / "nope.png")


def test_load_grayscale_mode(tmp_path, rng):
    from PIL import Image

    arr = (rng.random((10, 12)) * 255).astype(np.uint8)
    p = tmp_path / "g.png"
    Image.fromarray(arr, mode="L").save(p)
    back = load_image(p)
    assert back.ndim == 2 and back.shape == (10, 12)
