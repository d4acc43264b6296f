"""Augmentation pipeline tests."""

import numpy as np
import pytest

from cfdepth.augment import (
    AugmentConfig,
    AugmentedSample,
    augment_sample,
    geometric_color_jitter,
    mask_dropout,
    random_crop_rescale,
)
from cfdepth.errors import InvalidInput
from cfdepth.imgeo import (
    DepthMap,
    Intrinsics,
    ObjectMask,
    RgbImage,
    bilinear_resize,
    center_crop_box,
    crop,
    resize_nearest,
)
from cfdepth.normals import gradient_normals, quantized_smoothed_normals
from cfdepth.synthgen import FactorLabels, SampleRecord, generate_sample

W, H = 100, 80

IDENTITY_CONFIG = AugmentConfig(
    crop_min=1.0, crop_max=1.0, rotation_deg=0.0, flip_prob=0.0,
    color_min=1.0, color_max=1.0, mask_dropout_rate=0.0,
)


@pytest.fixture(scope="module")
def sample():
    return generate_sample(FactorLabels("simple", "common", 1, "wall", 1.5), 21, W, H)


def flat_sample(value=2.0):
    intr = Intrinsics(fx=86.6, fy=86.6, cx=(W - 1) / 2, cy=(H - 1) / 2)
    depth = DepthMap(data=np.full((H, W), value, dtype=np.float32), intrinsics=intr)
    return SampleRecord(
        rgb=RgbImage(data=np.full((H, W, 3), 0.5, dtype=np.float32)),
        mask=ObjectMask(data=np.ones((H, W), dtype=np.uint8)),
        depth_with=depth,
        depth_without=depth,
        intrinsics=intr,
        factors=None,
        sample_id="flat",
        seed=0,
    )


class TestRandomCropRescale:
    def test_alpha_one_centered_matches_center_crop(self, sample):
        x0, y0, cw, ch = center_crop_box(W, H, 5, 4)
        out = random_crop_rescale(sample, 1.0, (x0, y0))
        np.testing.assert_array_equal(out.rgb.data, crop(sample.rgb, x0, y0, cw, ch).data)
        np.testing.assert_array_equal(out.depth_with.data,
                                      crop(sample.depth_with, x0, y0, cw, ch).data)

    def test_two_thirds_alpha_scales_constant_depth(self):
        s = flat_sample(2.0)
        out = random_crop_rescale(s, 2.0 / 3.0, (5, 5))
        np.testing.assert_allclose(out.depth_with.data, 3.0, rtol=1e-6)
        np.testing.assert_allclose(out.depth_without.data, 3.0, rtol=1e-6)

    def test_depth_scale_rule_is_one_division(self, sample):
        alpha = 0.8
        out = random_crop_rescale(sample, alpha, (3, 7))
        cw = out.rgb.width
        ch = out.rgb.height
        manual = crop(sample.depth_without, 3, 7, cw, ch).data / np.float32(alpha)
        np.testing.assert_array_equal(out.depth_without.data, manual)

    def test_flat_plane_normals_unchanged(self):
        s = flat_sample(2.0)
        before = gradient_normals(s.depth_without).data[10, 10]
        out = random_crop_rescale(s, 2.0 / 3.0, (4, 4))
        after = gradient_normals(out.depth_without).data[10, 10]
        np.testing.assert_allclose(before, [0, 0, 1], atol=1e-7)
        np.testing.assert_allclose(after, [0, 0, 1], atol=1e-7)

    def test_window_out_of_bounds(self, sample):
        with pytest.raises(InvalidInput):
            random_crop_rescale(sample, 1.0, (50, 50))

    def test_bad_alpha(self, sample):
        with pytest.raises(InvalidInput):
            random_crop_rescale(sample, 1.5, (0, 0))


class TestGeometricColorJitter:
    def test_identity_params_change_nothing(self, sample):
        out = geometric_color_jitter(sample, 0.0, False, (1.0, 1.0, 1.0))
        assert out.rgb.data.tobytes() == sample.rgb.data.tobytes()
        assert out.mask.data.tobytes() == sample.mask.data.tobytes()
        assert out.depth_with.data.tobytes() == sample.depth_with.data.tobytes()

    def test_flip_twice_is_identity(self, sample):
        once = geometric_color_jitter(sample, 0.0, True, (1.0, 1.0, 1.0))
        twice = geometric_color_jitter(once, 0.0, True, (1.0, 1.0, 1.0))
        assert twice.rgb.data.tobytes() == sample.rgb.data.tobytes()
        assert twice.mask.data.tobytes() == sample.mask.data.tobytes()
        assert twice.depth_without.data.tobytes() == sample.depth_without.data.tobytes()
        assert twice.intrinsics == sample.intrinsics

    def test_color_clamps_at_one(self):
        s = flat_sample()
        rgb = np.full((H, W, 3), 0.9, dtype=np.float32)
        s = SampleRecord(**{**s.__dict__, "rgb": RgbImage(data=rgb)})
        out = geometric_color_jitter(s, 0.0, False, (1.2, 1.0, 0.5))
        assert out.rgb.data[0, 0, 0] == pytest.approx(1.0)
        assert out.rgb.data[0, 0, 1] == pytest.approx(0.9)
        assert out.rgb.data[0, 0, 2] == pytest.approx(0.45)

    def test_rotation_keeps_mask_binary_and_depth_positive(self, sample):
        out = geometric_color_jitter(sample, 4.0, False, (1.0, 1.0, 1.0))
        assert set(np.unique(out.mask.data)) <= {0, 1}
        assert np.all(out.depth_with.data >= 0)
        assert out.rgb.data.shape == sample.rgb.data.shape

    def test_rotation_zooms_intrinsics(self, sample):
        out = geometric_color_jitter(sample, 5.0, False, (1.0, 1.0, 1.0))
        assert out.intrinsics.fx > sample.intrinsics.fx

    def test_constant_depth_survives_rotation(self):
        s = flat_sample(2.5)
        out = geometric_color_jitter(s, 3.0, False, (1.0, 1.0, 1.0))
        np.testing.assert_allclose(out.depth_with.data, 2.5, rtol=1e-6)


class TestMaskDropout:
    def mask(self, h=128, w=160):
        return ObjectMask(data=np.ones((h, w), dtype=np.uint8))

    def test_rate_zero_unchanged(self):
        m = self.mask()
        out, flipped = mask_dropout(m, 0.0, 1)
        assert out.data.tobytes() == m.data.tobytes()
        assert not flipped.any()

    def test_rate_one_flips_all(self):
        m = self.mask(4, 5)
        out, flipped = mask_dropout(m, 1.0, 1)
        assert flipped.all()
        np.testing.assert_array_equal(out.data, 0)

    def test_flip_count_within_binomial_band(self):
        # n = 128 * 160 = 20480 at rate 0.1: mean 2048, sigma ~42.9;
        # the 4-sigma band is about [1876, 2219].
        n = 128 * 160
        mean, sigma = n * 0.1, (n * 0.1 * 0.9) ** 0.5
        for seed in range(5):
            _, flipped = mask_dropout(self.mask(), 0.1, seed)
            assert mean - 4 * sigma <= flipped.sum() <= mean + 4 * sigma

    def test_flips_are_content_independent(self):
        a = ObjectMask(data=np.zeros((20, 20), dtype=np.uint8))
        b = ObjectMask(data=np.ones((20, 20), dtype=np.uint8))
        _, fa = mask_dropout(a, 0.3, 7)
        _, fb = mask_dropout(b, 0.3, 7)
        np.testing.assert_array_equal(fa, fb)

    def test_bad_rate(self):
        with pytest.raises(InvalidInput):
            mask_dropout(self.mask(4, 4), 1.5, 0)


class TestAugmentSample:
    def test_determinism(self, sample):
        a = augment_sample(sample, 33)
        b = augment_sample(sample, 33)
        for name in ("rgb", "mask", "flipped", "target_depth", "normals", "conf", "valid"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes(), name
        assert a.intrinsics_out == b.intrinsics_out

    def test_different_seeds_differ(self, sample):
        a = augment_sample(sample, 1)
        b = augment_sample(sample, 2)
        assert a.rgb.tobytes() != b.rgb.tobytes()

    def test_degenerate_config_is_pure_resample(self, sample):
        out = augment_sample(sample, 5, IDENTITY_CONFIG)
        x0, y0, cw, ch = center_crop_box(W, H, 80, 64)
        expected_rgb = bilinear_resize(crop(sample.rgb, x0, y0, cw, ch), 80, 64)
        np.testing.assert_array_equal(out.rgb, expected_rgb.data.transpose(2, 0, 1))
        expected_mask = resize_nearest(crop(sample.mask, x0, y0, cw, ch), 80, 64)
        np.testing.assert_array_equal(out.mask, expected_mask.data)
        assert not out.flipped.any()
        expected_target = bilinear_resize(crop(sample.depth_without, x0, y0, cw, ch), 40, 32)
        np.testing.assert_array_equal(out.target_depth, expected_target.data)

    def test_shapes_and_dtypes(self, sample):
        out = augment_sample(sample, 3)
        assert out.rgb.shape == (3, 64, 80)
        assert out.mask.shape == (64, 80)
        assert out.target_depth.shape == (32, 40)
        assert out.normals.shape == (3, 32, 40)
        assert out.conf.shape == (32, 40)
        assert out.valid.shape == (32, 40)

    def test_normals_never_stale(self, sample):
        # Shipped normals must equal the quantized smoothing of gradient
        # normals of the shipped target depth, recomputed from scratch.
        out = augment_sample(sample, 9)
        target = DepthMap(data=out.target_depth, intrinsics=out.intrinsics_out)
        normals, conf = quantized_smoothed_normals(gradient_normals(target))
        np.testing.assert_array_equal(out.normals, normals.data.transpose(2, 0, 1))
        np.testing.assert_array_equal(out.conf, conf.data)

    def test_flipped_pixels_excluded_from_validity(self, sample):
        cfg = AugmentConfig(mask_dropout_rate=0.3)
        out = augment_sample(sample, 13, cfg)
        not_flipped = resize_nearest((~out.flipped).astype(np.uint8), 40, 32)
        assert np.all(out.valid <= not_flipped)

    def test_empty_mask_branch(self, sample):
        out = augment_sample(sample, 17, IDENTITY_CONFIG, empty_mask=True)
        np.testing.assert_array_equal(out.mask, 1)  # all-keep input mask
        x0, y0, cw, ch = center_crop_box(W, H, 80, 64)
        expected = bilinear_resize(crop(sample.depth_with, x0, y0, cw, ch), 40, 32)
        np.testing.assert_array_equal(out.target_depth, expected.data)

    def test_empty_mask_still_gets_dropout(self, sample):
        cfg = AugmentConfig(mask_dropout_rate=0.5)
        out = augment_sample(sample, 19, cfg, empty_mask=True)
        assert out.flipped.any()
        assert (out.mask == 0).any()

    def test_config_validation(self):
        with pytest.raises(InvalidInput):
            AugmentConfig(crop_min=0.0)
        with pytest.raises(InvalidInput):
            AugmentConfig(flip_prob=1.5)
