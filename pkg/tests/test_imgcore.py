import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from iqarank.imgcore import (
    ImageError, as_image, extract_luma, load_image, png_bytes, psnr, replace_luma,
    rgb_to_ycbcr, save_image, ycbcr_to_rgb,
)


def _png(path, pixels):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), "RGB").save(path)
    return path


def test_load_white_and_black_pixels(tmp_path):
    assert np.array_equal(load_image(_png(tmp_path / "w.png", [[[255, 255, 255]]])), np.ones((1, 1, 3)))
    assert np.array_equal(load_image(_png(tmp_path / "b.png", [[[0, 0, 0]]])), np.zeros((1, 1, 3)))


def test_load_scales_by_255(tmp_path):
    px = np.zeros((2, 2, 3), np.uint8)
    px[0, 0] = (128, 64, 32)
    img = load_image(_png(tmp_path / "p.png", px))
    assert img.shape == (2, 2, 3)
    assert np.array_equal(img[0, 0], np.array([128, 64, 32]) / 255.0)


def test_load_rejects_unsupported_and_unreadable(tmp_path):
    bmp = tmp_path / "x.bmp"
    Image.new("RGB", (2, 2)).save(bmp)
    with pytest.raises(ImageError, match="unsupported"):
        load_image(bmp)
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ImageError):
        load_image(junk)
    with pytest.raises(ImageError):
        load_image(tmp_path / "missing.png")


def test_png_round_trip_within_half_quantum(tmp_path, rng):
    img = rng.random((16, 16, 3))
    save_image(img, tmp_path / "r.png")
    back = load_image(tmp_path / "r.png")
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-12
    # a second round trip is exact
    save_image(back, tmp_path / "r2.png")
    assert np.array_equal(load_image(tmp_path / "r2.png"), back)


def test_png_bytes_deterministic(rng):
    img = rng.random((8, 8, 3))
    assert png_bytes(img) == png_bytes(img.copy())


def test_as_image_validation():
    assert as_image(np.full((2, 3), 255, np.uint8)).shape == (2, 3, 3)
    for bad in (np.zeros((2, 2, 4)), np.zeros((0, 2, 3)), np.full((1, 1, 3), 1.5),
                np.full((1, 1, 3), np.nan)):
        with pytest.raises(ImageError):
            as_image(bad)


def test_luma_coefficients():
    assert extract_luma(np.ones((2, 2, 3))).tolist() == [[1.0, 1.0], [1.0, 1.0]]
    assert np.all(extract_luma(np.zeros((2, 2, 3))) == 0.0)
    assert extract_luma(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.299, abs=1e-15)


def test_ycbcr_round_trip(rng):
    img = rng.random((5, 7, 3))
    assert np.allclose(ycbcr_to_rgb(rgb_to_ycbcr(img)), img, atol=1e-12)
    gray = np.full((2, 2, 3), 0.3)
    assert np.allclose(rgb_to_ycbcr(gray)[..., 1:], 0.0, atol=1e-15)


def test_replace_luma_identity(natural_images):
    img = natural_images["coffee"]
    assert np.max(np.abs(replace_luma(img, extract_luma(img)) - img)) <= 2 / 255


def test_replace_luma_gray_and_zero(rng):
    gray = np.full((3, 4, 3), 0.7)
    assert np.allclose(replace_luma(gray, np.full((3, 4), 0.25)), 0.25, atol=1e-12)
    img = rng.random((6, 6, 3))
    out = replace_luma(img, np.zeros((6, 6)))
    assert np.all(np.abs(extract_luma(out)) <= 1 / 255)


def test_replace_luma_shape_mismatch():
    with pytest.raises(ImageError):
        replace_luma(np.zeros((2, 2, 3)), np.zeros((3, 2)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)),
       arrays(np.float64, (4, 5), elements=st.floats(0, 1)))
def test_replace_luma_preserves_target_luma(img, luma):
    out = replace_luma(img, luma)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.max(np.abs(extract_luma(out) - luma)) <= 2 / 255


def test_psnr():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == float("inf")
    b = a + 0.1
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ImageError):
        psnr(a, np.zeros((4, 5, 3)))
