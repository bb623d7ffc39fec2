"""Tests for the feature extractors and the feature-space loss."""
from __future__ import annotations

import numpy as np
import pytest

from latentveil.errors import ImageShapeError, ShapeError, ValidationError
from latentveil.imaging import ImageTensor
from latentveil.perception import (
    Extractor,
    ExtractorSpec,
    extract,
    feature_loss,
    feature_loss_gradient,
)

RANDCONV = ExtractorSpec(kind="randconv", seed=3, stages=2)


def _image(h=8, w=8, seed=0):
    return ImageTensor(np.random.default_rng(seed).uniform(0.0, 1.0, (h, w, 3)))


# ---- specs -----------------------------------------------------------------------

def test_unknown_kind_is_rejected():
    with pytest.raises(ValidationError):
        ExtractorSpec(kind="vgg")  # type: ignore[arg-type]


def test_randconv_needs_a_stage():
    with pytest.raises(ValidationError):
        ExtractorSpec(kind="randconv", stages=0)


def test_describe_names_the_weights():
    assert ExtractorSpec().describe() == "pixel"
    assert RANDCONV.describe() == "randconv(seed=3,stages=2)"


# ---- forward ---------------------------------------------------------------------

def test_pixel_features_are_the_flattened_image():
    img = _image()
    assert np.array_equal(extract(img, ExtractorSpec()), img.data.reshape(-1))


def test_randconv_feature_size():
    # 8×8 → 4×4 → 2×2, eight filters
    assert extract(_image(), RANDCONV).shape == (2 * 2 * 8,)


def test_randconv_is_deterministic_per_seed():
    img = _image()
    a = extract(img, RANDCONV)
    b = extract(img, RANDCONV)
    c = extract(img, ExtractorSpec(kind="randconv", seed=4, stages=2))
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_randconv_rejects_images_smaller_than_its_pooling():
    with pytest.raises(ImageShapeError):
        extract(_image(8, 8), ExtractorSpec(kind="randconv", stages=4))


# ---- loss ------------------------------------------------------------------------

def test_feature_loss_is_mean_squared_difference():
    assert feature_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 5.0


def test_feature_loss_is_zero_on_identical_features():
    y = extract(_image(), RANDCONV)
    assert feature_loss(y, y) == 0.0


def test_feature_loss_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        feature_loss(np.zeros(3), np.zeros(4))


# ---- backward --------------------------------------------------------------------

def _numeric_gradient(spec, target, arr, positions, h=1e-5):
    extractor = Extractor(spec)
    out = []
    for pos in positions:
        plus, minus = arr.copy(), arr.copy()
        plus[pos] += h
        minus[pos] -= h
        f_plus = feature_loss(target, extractor.forward(plus)[0])
        f_minus = feature_loss(target, extractor.forward(minus)[0])
        out.append((f_plus - f_minus) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("spec", [ExtractorSpec(), RANDCONV], ids=["pixel", "randconv"])
@pytest.mark.parametrize("shape", [(8, 8), (9, 10)])
def test_loss_gradient_matches_central_differences(spec, shape):
    img = _image(*shape, seed=1)
    target = extract(_image(*shape, seed=2), spec)
    current = extract(img, spec)
    analytic = feature_loss_gradient(target, current, spec, img)
    assert analytic.shape == img.data.shape

    rng = np.random.default_rng(5)
    positions = [tuple(int(rng.integers(0, n)) for n in img.data.shape) for _ in range(12)]
    numeric = _numeric_gradient(spec, target, np.array(img.data), positions)
    assert np.allclose([analytic[p] for p in positions], numeric, rtol=1e-5, atol=1e-9)


def test_backward_is_linear_in_the_feature_gradient():
    extractor = Extractor(RANDCONV)
    _, tape = extractor.forward(_image().data)
    rng = np.random.default_rng(0)
    g1, g2 = rng.standard_normal(32), rng.standard_normal(32)
    combined = extractor.backward(tape, 2.0 * g1 - g2)
    separate = 2.0 * extractor.backward(tape, g1) - extractor.backward(tape, g2)
    assert np.allclose(combined, separate, atol=1e-12)


def test_loss_gradient_checks_feature_shapes():
    with pytest.raises(ShapeError):
        feature_loss_gradient(np.zeros(3), np.zeros(3), ExtractorSpec(), _image())
