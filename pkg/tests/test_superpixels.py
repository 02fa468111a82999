"""Segmentation invariants: partition, connectivity, determinism, geometry."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reliascore.images import GrayImage
from reliascore.superpixels import (
    SlicParams,
    SuperpixelLabeling,
    four_connected,
    grid_labeling,
    label_areas,
    region_mask,
    save_label_png,
    slic_segment,
)


class TestSlicParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            SlicParams(target_area=0)
        with pytest.raises(ValueError):
            SlicParams(iterations=0)
        with pytest.raises(ValueError):
            SlicParams(compactness=0.0)


class TestSuperpixelLabeling:
    def test_rejects_unused_ids(self):
        labels = np.zeros((3, 3), dtype=np.int32)
        with pytest.raises(ValueError):
            SuperpixelLabeling(labels, 2)

    def test_rejects_out_of_range_labels(self):
        labels = np.full((3, 3), 5, dtype=np.int32)
        with pytest.raises(ValueError):
            SuperpixelLabeling(labels, 2)

    def test_freezes_array(self):
        labels = np.zeros((2, 2), dtype=np.int32)
        lab = SuperpixelLabeling(labels, 1)
        with pytest.raises(ValueError):
            lab.labels[0, 0] = 1


class TestGridLabeling:
    def test_exact_tiling(self):
        lab = grid_labeling(6, 6, 3)
        assert lab.region_count == 4
        assert (label_areas(lab) == 9).all()

    def test_clipped_edges(self):
        lab = grid_labeling(5, 7, 3)
        assert lab.region_count == 6  # 2 rows x 3 cols of cells
        assert label_areas(lab).sum() == 35

    def test_row_major_ids(self):
        lab = grid_labeling(4, 4, 2)
        assert lab.labels[0, 0] == 0
        assert lab.labels[0, 3] == 1
        assert lab.labels[3, 3] == 3


class TestRegionMask:
    def test_trivial_sets(self):
        lab = grid_labeling(4, 4, 2)
        assert region_mask(lab, set(range(4))).popcount == 16
        assert region_mask(lab, set()).is_empty()

    def test_single_region_popcount_matches_area(self):
        img = GrayImage(np.random.default_rng(2).random((24, 24)))
        lab = slic_segment(img, SlicParams(target_area=16))
        areas = label_areas(lab)
        for rid in (0, lab.region_count // 2, lab.region_count - 1):
            assert region_mask(lab, {rid}).popcount == areas[rid]

    def test_out_of_range_id(self):
        lab = grid_labeling(4, 4, 2)
        with pytest.raises(ValueError):
            region_mask(lab, {7})


class TestSlicExamples:
    def test_uniform_image_near_regular_grid(self):
        img = GrayImage(np.full((60, 60), 0.5))
        lab = slic_segment(img, SlicParams(target_area=30))
        areas = label_areas(lab)
        assert 100 <= lab.region_count <= 144  # ~120 for a 60x60 at area 30
        assert areas.min() >= 15 and areas.max() <= 60
        assert four_connected(lab)

    def test_flat_halves_no_straddle(self):
        img = GrayImage(
            np.concatenate([np.zeros((40, 20)), np.ones((40, 20))], axis=1)
        )
        lab = slic_segment(img, SlicParams(compactness=0.02))
        data = img.data
        for rid in range(lab.region_count):
            vals = data[lab.labels == rid]
            assert vals.size > 0
            assert vals.var() == 0.0  # each region stays on one side

    def test_whole_image_single_region(self):
        img = GrayImage(np.random.default_rng(1).random((8, 8)))
        lab = slic_segment(img, SlicParams(target_area=64))
        assert lab.region_count == 1
        assert (lab.labels == 0).all()

    def test_image_smaller_than_cell_rejected(self):
        img = GrayImage(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            slic_segment(img, SlicParams(target_area=10))


class TestSlicInvariants:
    @settings(max_examples=12, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**31),
        target=st.integers(min_value=9, max_value=40),
    )
    def test_partition_and_connectivity(self, seed, target):
        img = GrayImage(np.random.default_rng(seed).random((28, 26)))
        lab = slic_segment(img, SlicParams(target_area=target))
        areas = label_areas(lab)
        assert areas.sum() == 28 * 26
        assert areas.min() >= 1
        assert four_connected(lab)

    def test_deterministic_across_runs(self):
        img = GrayImage(np.random.default_rng(5).random((48, 48)))
        a = slic_segment(img, SlicParams())
        b = slic_segment(img, SlicParams())
        assert np.array_equal(a.labels, b.labels)
        assert a.region_count == b.region_count

    def test_constant_image_regions_near_seeds(self):
        img = GrayImage(np.full((50, 50), 0.25))
        params = SlicParams(target_area=30)
        lab = slic_segment(img, params)
        spacing = math.sqrt(params.target_area)
        # Each region's centroid stays within 2S of some initial grid point.
        per_side = round(50 / spacing)
        step = 50 / per_side
        seeds = np.array(
            [
                (step * (i + 0.5), step * (j + 0.5))
                for i in range(per_side)
                for j in range(per_side)
            ]
        )
        for rid in range(lab.region_count):
            ys, xs = np.nonzero(lab.labels == rid)
            c = np.array([ys.mean(), xs.mean()])
            assert np.hypot(*(seeds - c).T).min() <= 2 * spacing

    def test_no_empty_ids_when_clusters_starve(self):
        # Strong two-level contrast starves boundary-straddling clusters;
        # their ids must not survive into the final labeling.
        img = GrayImage(
            np.concatenate([np.zeros((40, 20)), np.ones((40, 20))], axis=1)
        )
        lab = slic_segment(img, SlicParams(compactness=0.02))
        assert label_areas(lab).min() >= 1


class TestLabelPng:
    def test_round_trip(self, tmp_path):
        img = GrayImage(np.random.default_rng(3).random((32, 32)))
        lab = slic_segment(img, SlicParams(target_area=20))
        p = tmp_path / "labels.png"
        save_label_png(lab, p)
        from PIL import Image

        back = np.array(Image.open(p))
        assert back.shape == (32, 32)
        assert np.array_equal(back.astype(np.int32), lab.labels)
