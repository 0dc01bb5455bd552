import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from wlmicd import imgcore
from wlmicd.imgcore import (BitDepthError, ChannelCountError, ImageFormatError,
                            ShapeMismatchError)

images = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def test_pgm_round_trip_row_major(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 64, 128, 255]))
    img = imgcore.load_image(path)
    assert img.dtype == np.uint8
    assert img.tolist() == [[0, 64], [128, 255]]


@given(images)
def test_png_and_pgm_round_trip(tmp_path_factory, img):
    d = tmp_path_factory.mktemp("rt")
    for name in ("x.png", "x.pgm"):
        imgcore.save_image(img, d / name)
        np.testing.assert_array_equal(imgcore.load_image(d / name), img)


def test_rgb_png_is_channel_error(tmp_path):
    path = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(path)
    with pytest.raises(ChannelCountError):
        imgcore.load_image(path)


def test_sixteen_bit_is_depth_error(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.full((4, 4), 1000, np.uint16)).save(path)
    with pytest.raises(BitDepthError):
        imgcore.load_image(path)


def test_depth_and_channel_errors_are_distinct():
    assert not issubclass(BitDepthError, ChannelCountError)
    assert not issubclass(ChannelCountError, BitDepthError)


def test_unreadable_files(tmp_path):
    with pytest.raises(ImageFormatError):
        imgcore.load_image(tmp_path / "missing.png")
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        imgcore.load_image(junk)


@pytest.mark.parametrize("bad", [np.zeros(5), np.zeros((2, 2, 2)), np.full((2, 2), 256),
                                 np.full((2, 2), -1), np.full((2, 2), 0.5), np.zeros((0, 3))])
def test_as_image_rejects(bad):
    with pytest.raises(ValueError):
        imgcore.as_image(bad)


@given(images)
def test_histogram_counts(img):
    h = imgcore.histogram(img)
    assert h.shape == (256,)
    assert h.sum() == img.size
    for v in np.unique(img)[:5]:
        assert h[v] == np.count_nonzero(img == v)


@given(images, images)
def test_difference_range(a, b):
    if a.shape != b.shape:
        with pytest.raises(ShapeMismatchError):
            imgcore.difference(a, b)
        return
    d = imgcore.difference(a, b)
    assert d.dtype == np.int16
    np.testing.assert_array_equal(d, a.astype(int) - b.astype(int))


def test_mask_round_trip(tmp_path):
    mask = np.eye(5, dtype=bool)
    imgcore.save_mask(mask, tmp_path / "m.png")
    assert imgcore.load_image(tmp_path / "m.png").max() == 255
    np.testing.assert_array_equal(imgcore.load_mask(tmp_path / "m.png"), mask)


def test_as_mask_shape_check():
    with pytest.raises(ShapeMismatchError):
        imgcore.as_mask(np.zeros((3, 3), bool), (4, 4))


@given(images, st.data())
def test_overlay_recovers_mask(img, data):
    mask = data.draw(arrays(bool, img.shape))
    rgb = imgcore.overlay_rgb(img, mask)
    gray = (rgb[..., 0] == rgb[..., 1]) & (rgb[..., 1] == rgb[..., 2])
    np.testing.assert_array_equal(~gray, mask)
    np.testing.assert_array_equal(rgb[~mask, 0], img[~mask])


def test_overlay_needs_parent_dir(tmp_path):
    with pytest.raises(OSError):
        imgcore.save_overlay(np.zeros((2, 2), np.uint8), np.zeros((2, 2), bool),
                             tmp_path / "nope" / "o.png")


def test_save_leaves_no_temp_files(tmp_path):
    imgcore.save_image(np.zeros((3, 3), np.uint8), tmp_path / "a.png")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.png"]
