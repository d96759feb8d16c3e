import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cilbench.augment import (
    AugmentationConfig,
    adjust_hue,
    augment_pair,
    augment_view,
    gaussian_blur,
    grayscale,
    resize_bilinear,
    solarize,
)

from conftest import random_image

images = arrays(
    np.float64,
    st.tuples(st.integers(4, 12), st.integers(4, 12), st.just(3)),
    elements=st.floats(0.0, 1.0, width=16),
)


def test_grayscale_constant_gray_is_fixed_point():
    img = np.full((5, 5, 3), 0.5)
    np.testing.assert_allclose(grayscale(img), img)


def test_grayscale_pure_red():
    img = np.zeros((2, 2, 3))
    img[:, :, 0] = 1.0
    out = grayscale(img)
    np.testing.assert_allclose(out, 0.299)


@settings(max_examples=40, deadline=None)
@given(images)
def test_grayscale_channels_equal_and_idempotent(img):
    out = grayscale(img)
    np.testing.assert_array_equal(out[:, :, 0], out[:, :, 1])
    np.testing.assert_array_equal(out[:, :, 0], out[:, :, 2])
    np.testing.assert_allclose(grayscale(out), out, atol=1e-12)


def test_solarize_threshold_one_noop(rng):
    img = random_image(rng) * 0.9
    np.testing.assert_array_equal(solarize(img, 1.0), img)


def test_solarize_threshold_zero_inverts(rng):
    img = random_image(rng)
    np.testing.assert_allclose(solarize(img, 0.0), 1.0 - img)


def test_solarize_definition():
    img = np.full((1, 1, 3), 0.7)
    np.testing.assert_allclose(solarize(img, 0.5), 0.3)
    img2 = np.full((1, 1, 3), 0.4)
    np.testing.assert_allclose(solarize(img2, 0.5), 0.4)


@settings(max_examples=30, deadline=None)
@given(images, st.floats(0.1, 2.0))
def test_blur_preserves_range(img, sigma):
    out = gaussian_blur(img, sigma)
    assert out.min() >= 0.0 and out.max() <= 1.0


@settings(max_examples=30, deadline=None)
@given(images, st.floats(-0.5, 0.5))
def test_hue_preserves_range(img, shift):
    out = adjust_hue(img, shift)
    assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-12


def test_hue_full_turn_is_identity(rng):
    img = random_image(rng)
    np.testing.assert_allclose(adjust_hue(img, 0.0), img, atol=1e-9)


def test_resize_identity(rng):
    img = random_image(rng, 8, 8)
    np.testing.assert_allclose(resize_bilinear(img, 8, 8), img, atol=1e-12)


def test_resize_constant_image(rng):
    img = np.full((9, 7, 3), 0.42)
    out = resize_bilinear(img, 5, 11)
    np.testing.assert_allclose(out, 0.42, atol=1e-12)


# -- pipeline --------------------------------------------------------------------

def all_disabled(size):
    return AugmentationConfig(
        output_size=size, crop=False, flip=False, color_jitter=False,
        grayscale=False, blur=False, solarize=False,
    )


def test_identity_pipeline(rng):
    img = random_image(rng, 10, 10)
    pair = augment_pair(img, all_disabled(10), ("k",))
    np.testing.assert_array_equal(pair.view_i, img)
    np.testing.assert_array_equal(pair.view_j, img)


def test_grayscale_prob_one_forces_equal_channels(rng):
    img = random_image(rng, 12, 12)
    cfg = AugmentationConfig(output_size=12, grayscale_prob=1.0)
    pair = augment_pair(img, cfg, ("k", 3))
    for view in (pair.view_i, pair.view_j):
        np.testing.assert_allclose(view[:, :, 0], view[:, :, 1], atol=1e-12)
        np.testing.assert_allclose(view[:, :, 0], view[:, :, 2], atol=1e-12)


def test_pair_determinism(rng):
    img = random_image(rng, 16, 16)
    cfg = AugmentationConfig(output_size=12)
    a = augment_pair(img, cfg, (7, "phase", 2, "s01"))
    b = augment_pair(img, cfg, (7, "phase", 2, "s01"))
    np.testing.assert_array_equal(a.view_i, b.view_i)
    np.testing.assert_array_equal(a.view_j, b.view_j)


def test_views_differ(rng):
    img = random_image(rng, 16, 16)
    cfg = AugmentationConfig(output_size=12)
    pair = augment_pair(img, cfg, ("x",))
    assert not np.array_equal(pair.view_i, pair.view_j)


def test_stream_key_changes_output(rng):
    img = random_image(rng, 16, 16)
    cfg = AugmentationConfig(output_size=12)
    a = augment_pair(img, cfg, ("k1",))
    b = augment_pair(img, cfg, ("k2",))
    assert not np.array_equal(a.view_i, b.view_i)


@settings(max_examples=20, deadline=None)
@given(images, st.integers(0, 100))
def test_pipeline_preserves_range(img, key):
    cfg = AugmentationConfig(output_size=8, grayscale_prob=0.5)
    pair = augment_pair(img, cfg, (key,))
    for view in (pair.view_i, pair.view_j):
        assert view.shape == (8, 8, 3)
        assert view.min() >= 0.0 and view.max() <= 1.0


def test_disabled_op_independent_of_its_parameters(rng):
    # with grayscale disabled, its probability must not matter
    img = random_image(rng, 12, 12)
    base = AugmentationConfig(output_size=10, grayscale=False, grayscale_prob=0.2)
    perturbed = dataclasses.replace(base, grayscale_prob=0.9)
    a = augment_pair(img, base, ("k",))
    b = augment_pair(img, perturbed, ("k",))
    np.testing.assert_array_equal(a.view_i, b.view_i)
    np.testing.assert_array_equal(a.view_j, b.view_j)


def test_disabling_op_does_not_shift_other_streams(rng):
    # per-op RNG streams: toggling solarize leaves the crop/flip draws alone
    img = random_image(rng, 12, 12)
    with_sol = AugmentationConfig(output_size=10, color_jitter=False,
                                  grayscale=False, blur=False,
                                  solarize=True, solarize_prob=(0.0, 0.0))
    without = dataclasses.replace(with_sol, solarize=False)
    a = augment_pair(img, with_sol, ("k",))
    b = augment_pair(img, without, ("k",))
    np.testing.assert_array_equal(a.view_i, b.view_i)


def test_per_view_parameters(rng):
    # solarize prob 1 on view 2 only
    img = random_image(rng, 10, 10) * 0.9 + 0.05
    cfg = AugmentationConfig(
        output_size=10, crop=False, flip=False, color_jitter=False,
        grayscale=False, blur=False, solarize=True, solarize_prob=(0.0, 1.0),
        solarize_threshold=0.0,
    )
    pair = augment_pair(img, cfg, ("k",))
    np.testing.assert_array_equal(pair.view_i, img)
    np.testing.assert_allclose(pair.view_j, 1.0 - img)


def test_crop_resizes_to_output(rng):
    img = random_image(rng, 20, 14)
    cfg = AugmentationConfig(output_size=9)
    out = augment_view(img, cfg, ("k",), 0)
    assert out.shape == (9, 9, 3)


def test_config_validation():
    cfg = AugmentationConfig(flip_prob=1.5)
    with pytest.raises(Exception):
        cfg.validate()
