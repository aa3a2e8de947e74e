"""Scene generators, label dilation, and their construction invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlseg.errors import ConfigError
from mtlseg.synth import (
    CropSceneParams,
    LeafSceneParams,
    dilate_mask,
    gen_crop_scene,
    gen_leaf_scene,
    generate_dataset,
    random_crop_params,
)


def brute_force_dilate(mask, size):
    anchor = (size - 1) // 2
    h, w = mask.shape
    out = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr in range(-anchor, size - anchor):
                for dc in range(-anchor, size - anchor):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w:
                        out[rr, cc] = 1
    return out


class TestCropScenes:
    def test_deterministic(self):
        a = gen_crop_scene(CropSceneParams(seed=42))
        b = gen_crop_scene(CropSceneParams(seed=42))
        assert np.array_equal(a.image, b.image)
        assert all(np.array_equal(x, y) for x, y in zip(a.masks, b.masks))

    def test_no_gaps_when_count_zero(self):
        sample = gen_crop_scene(CropSceneParams(gap_count=0, seed=1))
        line, gap = sample.masks
        assert gap.sum() == 0 and line.sum() > 0

    def test_gap_pixels_lie_on_extended_trajectories(self):
        # Every gap pixel must be within 1 px of the line direction through
        # its nearest line pixels (collinearity of the host trajectory).
        params = CropSceneParams(seed=3)
        sample = gen_crop_scene(params)
        line, gap = sample.masks
        trajectory = (line | gap).astype(bool)
        gap_points = np.argwhere(gap)
        assert len(gap_points) > 0
        direction = np.array([np.sin(params.line_angle), np.cos(params.line_angle)])
        normal = np.array([np.cos(params.line_angle), -np.sin(params.line_angle)])
        line_points = np.argwhere(line)
        line_offsets = line_points @ normal
        for p in gap_points:
            assert np.min(np.abs(line_offsets - p @ normal)) <= 1.0

    def test_masks_disjoint(self):
        sample = gen_crop_scene(CropSceneParams(seed=5))
        line, gap = sample.masks
        assert not (line & gap).any()

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ConfigError):
            gen_crop_scene(CropSceneParams(line_spacing=3.0, line_thickness=5.0)).validate()

    def test_extent_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            gen_crop_scene(CropSceneParams(height=60, width=64))

    def test_thin_class_fraction_small_then_grows_under_dilation(self):
        # Both classes are narrow relative to the frame (the gap minority
        # class strongly so) and dilation strictly raises the fraction.
        sample = gen_crop_scene(CropSceneParams(seed=8))
        line, gap = sample.masks
        assert gap.mean() < 0.02
        assert line.mean() < 0.10
        for mask in sample.masks:
            assert dilate_mask(mask, 6).mean() > mask.mean()


class TestLeafScenes:
    def test_deterministic(self):
        a = gen_leaf_scene(LeafSceneParams(seed=11))
        b = gen_leaf_scene(LeafSceneParams(seed=11))
        assert np.array_equal(a.image, b.image)

    def test_no_damage_means_empty_defoliation(self):
        sample = gen_leaf_scene(LeafSceneParams(hole_count=0, bite_count=0, seed=2))
        leaf, defol = sample.masks
        assert defol.sum() == 0 and leaf.sum() > 0

    def test_leaf_and_defoliation_disjoint(self):
        sample = gen_leaf_scene(LeafSceneParams(seed=13))
        leaf, defol = sample.masks
        assert not (leaf & defol).any()

    def test_union_is_ideal_shape(self):
        # Regenerating without damage yields the ideal leaf; leaf + damage
        # from the damaged render must reproduce it pixel-exactly.
        damaged = gen_leaf_scene(LeafSceneParams(seed=17))
        pristine = gen_leaf_scene(LeafSceneParams(hole_count=0, bite_count=0, seed=17))
        union = damaged.masks[0] | damaged.masks[1]
        assert np.array_equal(union, pristine.masks[0])

    def test_oversized_leaf_rejected(self):
        with pytest.raises(ConfigError):
            gen_leaf_scene(LeafSceneParams(axis_a=40.0, axis_b=40.0))


class TestDilation:
    def test_empty_stays_empty(self):
        assert dilate_mask(np.zeros((10, 10), np.uint8), 6).sum() == 0

    def test_single_pixel_block_extents(self):
        mask = np.zeros((20, 20), np.uint8)
        mask[10, 10] = 1
        out = dilate_mask(mask, 6)
        rows, cols = np.where(out)
        assert (rows.min(), rows.max()) == (8, 13)
        assert (cols.min(), cols.max()) == (8, 13)
        assert out.sum() == 36

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("size", [3, 6])
    def test_matches_brute_force(self, seed, size):
        mask = (np.random.default_rng(seed).random((16, 16)) < 0.08).astype(np.uint8)
        assert np.array_equal(dilate_mask(mask, size), brute_force_dilate(mask, size))

    @given(st.integers(0, 2**31 - 1), st.floats(0.02, 0.3))
    @settings(max_examples=25, deadline=None)
    def test_monotone(self, seed, density):
        rng = np.random.default_rng(seed)
        sub = (rng.random((12, 12)) < density / 2).astype(np.uint8)
        extra = (rng.random((12, 12)) < density / 2).astype(np.uint8)
        full = sub | extra
        d_sub = dilate_mask(sub, 6)
        d_full = dilate_mask(full, 6)
        assert np.all(d_sub <= d_full)


class TestDatasetGeneration:
    def test_crop_dataset_layout(self, tmp_path):
        stems = generate_dataset("crop", 3, 64, 9, tmp_path)
        assert stems == ["s0000", "s0001", "s0002"]
        assert (tmp_path / "manifest.txt").exists()
        assert (tmp_path / "s0001.task2.pgm").exists()

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ConfigError):
            generate_dataset("maize", 2, 64, 0, tmp_path)

    def test_random_params_stay_valid(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            random_crop_params(rng, 64).validate()
