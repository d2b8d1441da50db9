"""Region cropping and upscale sizing."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from regionvqa.synthesis import crop_region, scaled_size


def gradient_image(width=200, height=160) -> Image.Image:
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[..., 0] = np.arange(width, dtype=np.uint32)[None, :] % 256
    arr[..., 1] = np.arange(height, dtype=np.uint32)[:, None] % 256
    arr[..., 2] = (np.arange(width)[None, :] + np.arange(height)[:, None]) % 256
    return Image.fromarray(arr, "RGB")


@pytest.mark.parametrize(
    "size,scale,expected",
    [
        ((50, 30), 2.0, (100, 60)),
        ((3, 5), 2.0, (6, 10)),
        ((3, 3), 1.5, (5, 5)),  # ceil(4.5)
        ((7, 7), 1.0, (7, 7)),
        ((10, 4), 2.5, (25, 10)),
    ],
)
def test_scaled_size_cases(size, scale, expected):
    assert scaled_size(size[0], size[1], scale) == expected


@settings(max_examples=200, deadline=None)
@given(
    w=st.integers(1, 4000),
    h=st.integers(1, 4000),
    s=st.floats(0.5, 8.0, allow_nan=False, allow_infinity=False),
)
def test_scaled_size_is_ceil(w, h, s):
    assert scaled_size(w, h, s) == (math.ceil(w * s), math.ceil(h * s))


def test_crop_exact_pixels_at_unit_scale(tmp_path):
    img = gradient_image()
    src = tmp_path / "src.png"
    img.save(src)
    bbox = [30, 40, 90, 100]
    spec = crop_region(src, bbox, 1.0, "img.b00", tmp_path / "crops")
    with Image.open(spec.crop_path) as crop:
        got = np.asarray(crop)
    expected = np.asarray(img)[40:100, 30:90]
    assert got.shape == expected.shape
    assert np.array_equal(got, expected), "crop must be the exact half-open region"
    assert (spec.crop_width, spec.crop_height) == (60, 60)


def test_crop_upscales_by_ceil(tmp_path):
    img = gradient_image()
    src = tmp_path / "src.png"
    img.save(src)
    spec = crop_region(src, [10, 10, 35, 27], 2.0, "img.b01", tmp_path / "crops")
    assert (spec.crop_width, spec.crop_height) == (50, 34)
    with Image.open(spec.crop_path) as crop:
        assert crop.size == (50, 34)
    assert spec.scale_factor == 2.0
    assert spec.crop_path.endswith("img.b01.png")


def test_single_pixel_region(tmp_path):
    img = gradient_image()
    src = tmp_path / "src.png"
    img.save(src)
    spec = crop_region(src, [5, 6, 6, 7], 2.0, "img.b02", tmp_path / "crops")
    with Image.open(spec.crop_path) as crop:
        arr = np.asarray(crop)
    assert arr.shape == (2, 2, 3)
    # a single source pixel upscales to a constant patch
    assert np.all(arr == arr[0, 0])
