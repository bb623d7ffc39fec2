"""Tests for ImageTensor, PNG I/O and the crop/resize step."""
from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from latentveil.errors import ImageFormatError, ImageIOError, ImageShapeError
from latentveil.imaging import (
    ImageTensor,
    center_crop_resize,
    decode_png,
    encode_png,
    load_image,
    quantize,
    save_image,
)


def _gradient_image(h=8, w=8, c=3):
    ramp = np.linspace(0.0, 1.0, h * w * c).reshape(h, w, c)
    return ImageTensor(ramp)


# ---- ImageTensor -------------------------------------------------------------

def test_two_dimensional_input_gets_a_channel_axis():
    img = ImageTensor(np.zeros((8, 9)))
    assert img.shape == (8, 9, 1)


def test_data_is_read_only():
    img = _gradient_image()
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 0.5


def test_constructor_copies_the_input():
    raw = np.zeros((8, 8, 3))
    img = ImageTensor(raw)
    raw[0, 0, 0] = 1.0
    assert img.data[0, 0, 0] == 0.0


@pytest.mark.parametrize("bad", [
    np.zeros((7, 8, 3)),
    np.zeros((8, 7)),
    np.zeros((8, 8, 2)),
    np.full((8, 8, 3), 1.5),
    np.full((8, 8, 3), -0.1),
    np.full((8, 8, 3), np.nan),
])
def test_invalid_rasters_are_rejected(bad):
    with pytest.raises(ImageShapeError):
        ImageTensor(bad)


# ---- quantization and PNG ------------------------------------------------------

def test_quantize_rounds_half_up():
    data = np.zeros((8, 8, 1))
    data[0, 0, 0] = 0.5  # 127.5 -> 128
    data[0, 1, 0] = 1.0 / 255.0
    data[0, 2, 0] = 0.4 / 255.0  # rounds down to 0
    q = quantize(ImageTensor(data))
    assert q.data[0, 0, 0] == 128 / 255.0
    assert q.data[0, 1, 0] == 1 / 255.0
    assert q.data[0, 2, 0] == 0.0


def test_quantize_is_idempotent():
    once = quantize(_gradient_image())
    assert np.array_equal(quantize(once).data, once.data)


def test_save_then_load_equals_quantize(tmp_path):
    img = _gradient_image(12, 10, 3)
    path = tmp_path / "img.png"
    save_image(img, path)
    loaded = load_image(path)
    assert loaded.shape == img.shape
    assert np.array_equal(loaded.data, quantize(img).data)


def test_grayscale_png_keeps_one_channel(tmp_path):
    img = _gradient_image(8, 8, 1)
    path = tmp_path / "gray.png"
    save_image(img, path)
    assert load_image(path).channels == 1


def test_png_bytes_round_trip_matches_file_round_trip(tmp_path):
    img = _gradient_image(9, 11, 3)
    path = tmp_path / "img.png"
    save_image(img, path)
    assert np.array_equal(decode_png(encode_png(img)).data, load_image(path).data)


def test_byte_value_maps_to_unit_scale_exactly(tmp_path):
    raw = np.arange(64, dtype=np.uint8).reshape(8, 8)
    path = tmp_path / "bytes.png"
    Image.fromarray(raw).save(path, format="PNG")
    loaded = load_image(path)
    assert np.array_equal(loaded.data[:, :, 0], raw / 255.0)


def test_missing_file_raises_io_error(tmp_path):
    with pytest.raises(ImageIOError) as excinfo:
        load_image(tmp_path / "absent.png")
    assert excinfo.value.path.endswith("absent.png")


def test_jpeg_is_rejected(tmp_path):
    path = tmp_path / "photo.jpg"
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(path, format="JPEG")
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_alpha_channel_is_rejected(tmp_path):
    path = tmp_path / "rgba.png"
    Image.fromarray(np.zeros((8, 8, 4), dtype=np.uint8)).save(path, format="PNG")
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_garbage_bytes_are_rejected():
    with pytest.raises(ImageFormatError):
        decode_png(b"definitely not a png")


def test_unwritable_target_raises_io_error(tmp_path):
    with pytest.raises(ImageIOError):
        save_image(_gradient_image(), tmp_path / "missing-dir" / "out.png")


# ---- center crop / resize ------------------------------------------------------

def test_crop_takes_the_centered_square():
    data = np.zeros((10, 12, 1))
    data[:, 1:11, 0] = 1.0  # exactly the centered 10×10 square
    out = center_crop_resize(ImageTensor(data), 10)
    assert out.shape == (10, 10, 1)
    assert np.all(out.data == 1.0)


def test_resize_preserves_constant_images():
    img = ImageTensor(np.full((16, 20, 3), 0.25))
    out = center_crop_resize(img, 8)
    assert out.shape == (8, 8, 3)
    assert np.allclose(out.data, 0.25)


def test_downscale_by_two_averages_pixel_pairs():
    # Half-pixel centers: output i samples input 2i + 0.5.
    data = np.tile(np.arange(16, dtype=np.float64) / 15.0, (16, 1))
    out = center_crop_resize(ImageTensor(data), 8)
    expected = (np.arange(8) * 2 + 0.5) / 15.0
    assert np.allclose(out.data[0, :, 0], expected)


@pytest.mark.parametrize("size", [7, 17])
def test_bad_target_sizes_raise(size):
    with pytest.raises(ImageShapeError):
        center_crop_resize(ImageTensor(np.zeros((16, 20, 3))), size)
