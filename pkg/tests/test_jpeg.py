import csv

import numpy as np
import pytest

from caplab.errors import IngestionError, InvalidConfigError, InvalidInputError
from caplab.imaging import load_image, save_image, to_grayscale
from caplab.jpeg import (
    BASE_CHROMA,
    BASE_LUMA,
    DarkenParams,
    LossReport,
    binned_loss_stats,
    darken,
    generate_procedural_images,
    jpeg_roundtrip,
    load_manifest,
    loss_map,
    procedural_image,
    scale_quant_tables,
    synthesize_dataset,
)
from caplab.jpeg import blockdct
from caplab.jpeg import _blockdct_np as np_backend
from oracles import (
    scalar_dct_block,
    scalar_idct_block,
    scalar_quantize_block,
    scalar_roundtrip_plane,
)


# --- quantization tables ---

def test_qf50_is_base_tables():
    t = scale_quant_tables(50)
    assert np.array_equal(t.luma, BASE_LUMA)
    assert np.array_equal(t.chroma, BASE_CHROMA)


def test_qf80_luma_dc():
    assert scale_quant_tables(80).luma[0, 0] == 6


def test_qf100_all_ones():
    t = scale_quant_tables(100)
    assert np.all(t.luma == 1) and np.all(t.chroma == 1)


def test_qf10_scales_up():
    t = scale_quant_tables(10)
    # scale 500: luma DC 16 -> floor((16*500+50)/100) = 80
    assert t.luma[0, 0] == 80


def test_qf_range_validation():
    for bad in (0, 101, -3):
        with pytest.raises(InvalidConfigError):
            scale_quant_tables(bad)
    with pytest.raises(InvalidConfigError):
        scale_quant_tables(True)


# --- block transform ---

def test_dct_idct_identity(rng):
    plane = rng.standard_normal((24, 16)) * 100
    back = blockdct.idct_plane(blockdct.dct_plane(plane))
    assert np.abs(back - plane).max() < 1e-6


def test_dct_matches_scalar_oracle(rng):
    blk = rng.standard_normal((8, 8)) * 50
    got = blockdct.dct_plane(blk)
    assert np.abs(got - scalar_dct_block(blk)).max() < 1e-9


def test_idct_matches_scalar_oracle(rng):
    coeffs = rng.standard_normal((8, 8)) * 50
    got = blockdct.idct_plane(coeffs)
    assert np.abs(got - scalar_idct_block(coeffs)).max() < 1e-9


def test_quantize_matches_scalar_oracle(rng):
    table = scale_quant_tables(80).luma
    coeffs = rng.standard_normal((8, 8)) * 200
    got = blockdct.quantize_coeffs(coeffs, table)
    assert np.array_equal(got, scalar_quantize_block(coeffs, table))


def test_roundtrip_plane_matches_scalar(rng):
    table = scale_quant_tables(80).luma
    plane = rng.standard_normal((16, 16)) * 80
    got = blockdct.roundtrip_plane(plane, table)
    want = scalar_roundtrip_plane(plane, table)
    assert np.abs(got - want).max() < 1e-6


def test_backends_agree(rng):
    try:
        from caplab.jpeg import _blockdct as cy_backend
    except ImportError:
        pytest.skip("compiled backend not built")
    table = scale_quant_tables(35).luma
    plane = rng.standard_normal((32, 24)) * 90
    a = cy_backend.roundtrip_plane(plane, table)
    b = np_backend.roundtrip_plane(plane, table)
    assert np.abs(a - b).max() < 1e-9


def test_plane_validation():
    table = scale_quant_tables(80).luma
    with pytest.raises(Exception):
        np_backend.dct_plane(np.zeros((10, 16)))  # height not multiple of 8


# --- roundtrip surrogate ---

def test_qf100_midgray_error_bound():
    img = np.full((16, 16, 3), 0.5)
    out = jpeg_roundtrip(img, 100)
    assert np.abs(out - img).max() <= 2 / 255


def test_roundtrip_output_in_range(rng):
    img = rng.random((24, 24, 3))
    out = jpeg_roundtrip(img, 30)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_roundtrip_rejects_grayscale(rng):
    with pytest.raises(InvalidInputError):
        jpeg_roundtrip(rng.random((16, 16)), 80)


def test_roundtrip_bad_subsampling(rng):
    with pytest.raises(InvalidConfigError):
        jpeg_roundtrip(rng.random((16, 16, 3)), 80, subsampling="4:1:1")


def test_roundtrip_nonmultiple_shapes(rng):
    for h, w in ((9, 9), (17, 23), (37, 51)):
        img = rng.random((h, w, 3))
        out = jpeg_roundtrip(img, 80)
        assert out.shape == img.shape
        out420 = jpeg_roundtrip(img, 80, subsampling="4:2:0")
        assert out420.shape == img.shape


def test_roundtrip_420_coarser_than_444(rng):
    img = procedural_image(3, 32, 32)
    e444 = loss_map(img, jpeg_roundtrip(img, 80)).sum()
    e420 = loss_map(img, jpeg_roundtrip(img, 80, subsampling="4:2:0")).sum()
    assert e420 >= e444


def test_loss_idempotence(rng):
    """Re-quantizing a quantized image changes much less than the first pass."""
    hits = 0
    total = 20
    for i in range(total):
        img = procedural_image(100 + i, 24, 24)
        once = jpeg_roundtrip(img, 80)
        twice = jpeg_roundtrip(once, 80)
        first = loss_map(img, once).sum()
        second = loss_map(once, twice).sum()
        if second < first:
            hits += 1
    assert hits >= 0.9 * total


def test_loss_monotone_in_qf(rng):
    totals = {}
    for qf in (90, 80, 50, 20):
        s = 0.0
        for i in range(20):
            img = procedural_image(200 + i, 24, 24)
            s += loss_map(img, jpeg_roundtrip(img, qf)).sum()
        totals[qf] = s / 20
    assert totals[90] < totals[80] < totals[50] < totals[20]


# --- loss analysis ---

def test_loss_map_identical(rng):
    img = rng.random((12, 12, 3))
    assert np.array_equal(loss_map(img, img), np.zeros((12, 12)))


def test_loss_map_constant_difference():
    a = np.full((8, 8, 3), 0.5)
    b = np.full((8, 8, 3), 0.4)
    assert np.allclose(loss_map(a, b), 0.1, atol=1e-12)


def test_loss_map_matches_elementwise(rng):
    a = rng.random((10, 10, 3))
    b = rng.random((10, 10, 3))
    want = np.abs(a - b).mean(axis=2)
    assert np.allclose(loss_map(a, b), want, atol=1e-15)


def test_loss_map_shape_mismatch(rng):
    with pytest.raises(InvalidInputError):
        loss_map(rng.random((8, 8, 3)), rng.random((8, 9, 3)))


def test_binned_stats_uniform_one_bin():
    img = np.full((16, 16, 3), 0.35)
    rep = binned_loss_stats(img, np.zeros((16, 16)), 10)
    assert rep.pixel_fraction[3] == 1.0
    assert sum(rep.pixel_fraction) == pytest.approx(1.0)
    assert all(f == 0.0 for i, f in enumerate(rep.pixel_fraction) if i != 3)


def test_binned_stats_loss_fraction_sums_to_one(rng):
    img = rng.random((16, 16, 3))
    lmap = rng.random((16, 16))
    rep = binned_loss_stats(img, lmap, 8)
    assert sum(rep.loss_fraction) == pytest.approx(1.0, abs=1e-12)


def test_binned_stats_two_bin_hand_partition():
    img = np.zeros((4, 8, 3))
    img[:, 4:] = 0.9
    lmap = np.zeros((4, 8))
    lmap[:, :4] = 0.2
    lmap[:, 4:] = 0.05
    rep = binned_loss_stats(img, lmap, 2)
    assert rep.mean_abs_loss[0] == pytest.approx(0.2)
    assert rep.mean_abs_loss[1] == pytest.approx(0.05)
    assert np.allclose(rep.pixel_fraction, (0.5, 0.5))
    total = 0.2 * 16 + 0.05 * 16
    assert rep.loss_fraction[0] == pytest.approx(0.2 * 16 / total)


def test_binned_stats_k_validation(rng):
    img = rng.random((8, 8, 3))
    with pytest.raises(InvalidConfigError):
        binned_loss_stats(img, np.zeros((8, 8)), 1)


def test_loss_report_csv(tmp_path, rng):
    img = rng.random((8, 8, 3))
    rep = binned_loss_stats(img, rng.random((8, 8)), 4)
    p = tmp_path / "r.csv"
    rep.write_csv(p)
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert list(rows[0]) == ["bin_low", "bin_high", "pixel_fraction",
                             "mean_abs_loss", "loss_fraction"]
    assert float(rows[0]["bin_low"]) == 0.0
    assert float(rows[-1]["bin_high"]) == 1.0


# --- darkening and synthesis ---

def test_darken_identity(rng):
    img = rng.random((8, 8, 3))
    assert np.allclose(darken(img, 1.0, 1.0, 0.0, 0), img, atol=1e-15)


def test_darken_uniform_example():
    img = np.full((4, 4, 3), 0.8)
    out = darken(img, 2.0, 0.5, 0.0, 0)
    assert np.allclose(out, 0.32, atol=1e-12)


def test_darken_deterministic(rng):
    img = rng.random((8, 8, 3))
    a = darken(img, 2.2, 0.2, 0.05, seed=9)
    b = darken(img, 2.2, 0.2, 0.05, seed=9)
    assert np.array_equal(a, b)
    c = darken(img, 2.2, 0.2, 0.05, seed=10)
    assert not np.array_equal(a, c)


def test_darken_param_validation(rng):
    img = rng.random((4, 4, 3))
    with pytest.raises(InvalidConfigError):
        darken(img, 0.5, 0.2, 0.0, 0)
    with pytest.raises(InvalidConfigError):
        darken(img, 2.2, 0.0, 0.0, 0)
    with pytest.raises(InvalidConfigError):
        darken(img, 2.2, 0.2, -0.1, 0)


def test_procedural_deterministic_and_parameterized():
    a = procedural_image(5, 48, 48)
    b = procedural_image(5, 48, 48)
    assert np.array_equal(a, b)
    smooth = procedural_image(5, 48, 48, detail=0.0)
    grainy = procedural_image(5, 48, 48, shadow_grain=0.3)
    assert not np.array_equal(a, smooth)
    assert not np.array_equal(a, grainy)
    # grain only perturbs; same seed keeps the same scene layout
    assert np.abs(a - grainy).mean() < 0.2


def test_procedural_validation():
    with pytest.raises(InvalidConfigError):
        procedural_image(0, 8, 8)
    with pytest.raises(InvalidConfigError):
        procedural_image(0, 32, 32, crush=1.5)
    with pytest.raises(InvalidConfigError):
        procedural_image(0, 32, 32, shadow_grain=2.0)


def test_synthesize_counts_and_manifest(tmp_path):
    src = tmp_path / "src"
    generate_procedural_images(src, 10, seed=3, height=48, width=48)
    man = synthesize_dataset(src, tmp_path / "data", qf=80,
                             darken_params=DarkenParams(noise_sigma=0.0),
                             split=0.8, seed=3)
    assert len(man.ids("train")) == 8
    assert len(man.ids("val")) == 2
    assert all(e.qf == 80 for e in man.entries)
    reread = load_manifest(tmp_path / "data")
    assert [e.id for e in reread.entries] == [e.id for e in man.entries]
    trip = man.load_triplet(man.entries[0].id)
    assert trip.bright.shape == trip.uncompressed_low.shape == \
        trip.compressed_low.shape == (48, 48, 3)


def test_synthesize_deterministic(tmp_path):
    src = tmp_path / "src"
    generate_procedural_images(src, 4, seed=11, height=48, width=48)
    synthesize_dataset(src, tmp_path / "a", seed=5,
                       darken_params=DarkenParams())
    synthesize_dataset(src, tmp_path / "b", seed=5,
                       darken_params=DarkenParams())
    for sub in ("manifest.csv", "low/proc_0000.png", "low_jpeg/proc_0000.png"):
        assert (tmp_path / "a" / sub).read_bytes() == \
            (tmp_path / "b" / sub).read_bytes()


def test_synthesize_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(IngestionError):
        synthesize_dataset(tmp_path / "empty", tmp_path / "out")


def test_synthesize_unreadable_offender_listed(tmp_path):
    src = tmp_path / "src"
    generate_procedural_images(src, 2, seed=1, height=48, width=48)
    (src / "broken.png").write_bytes(b"not a png")
    with pytest.raises(IngestionError) as err:
        synthesize_dataset(src, tmp_path / "out")
    assert "broken.png" in str(err.value)


def test_low_jpeg_consistent_with_roundtrip(tmp_path):
    """The stored compressed image is the roundtrip of the stored low image."""
    src = tmp_path / "src"
    generate_procedural_images(src, 2, seed=8, height=48, width=48)
    man = synthesize_dataset(src, tmp_path / "data", qf=80,
                             darken_params=DarkenParams(noise_sigma=0.0))
    trip = man.load_triplet(man.entries[0].id)
    comp = trip.compressed_low
    redone = jpeg_roundtrip(trip.uncompressed_low, 80)
    # stored files are 8-bit quantized, so allow one code of slack
    assert np.abs(redone - comp).max() <= 1.0 / 255 + 1e-9
