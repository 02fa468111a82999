"""Score containers and the built-in synthetic classifiers."""

import numpy as np
import pytest

from reliascore.classifiers import (
    BrightnessThresholdClassifier,
    ClassifierInfo,
    ClassScores,
    ConstantClassifier,
    LinearClassifier,
    RegionPresenceClassifier,
    SyntheticClassifierSpec,
    build_synthetic,
)
from reliascore.images import BinaryMask, GrayImage


class TestClassScores:
    def test_basic(self):
        s = ClassScores((0.2, 0.8))
        assert s.values == (0.2, 0.8)
        assert s.top_class() == 1

    def test_tie_goes_to_lowest_index(self):
        assert ClassScores((0.5, 0.5)).top_class() == 0
        assert ClassScores((0.1, 0.4, 0.4)).top_class() == 1

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            ClassScores((1.0,))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ClassScores((0.5, 1.2))
        with pytest.raises(ValueError):
            ClassScores((-0.1, 0.5))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ClassScores((float("nan"), 0.5))


class TestClassifierInfo:
    def test_validates_channels(self):
        with pytest.raises(ValueError):
            ClassifierInfo(class_count=2, input_channels=2)

    def test_validates_name_count(self):
        with pytest.raises(ValueError):
            ClassifierInfo(class_count=2, class_names=("only",))

    def test_min_two_classes(self):
        with pytest.raises(ValueError):
            ClassifierInfo(class_count=1)


class TestConstantClassifier:
    def test_always_same(self, rng):
        clf = ConstantClassifier((0.3, 0.7))
        img = GrayImage(rng.random((4, 4)))
        assert clf.classify(img).values == (0.3, 0.7)
        assert [s.values for s in clf.classify_batch([img, img])] == [(0.3, 0.7)] * 2
        assert clf.handshake().class_count == 2

    def test_parallel_safe(self):
        assert ConstantClassifier((0.5, 0.5)).parallel_safe


class TestLinearClassifier:
    def test_weighted_sum(self):
        w = np.zeros((2, 2))
        w[0, 0] = 0.5
        clf = LinearClassifier(w)
        img = GrayImage(np.array([[1.0, 1.0], [1.0, 1.0]]))
        s = clf.classify(img)
        assert s.values[1] == pytest.approx(0.5)
        assert s.values[0] == pytest.approx(0.5)

    def test_uniform_is_mean(self, rng):
        clf = LinearClassifier.uniform(6, 5)
        img = GrayImage(rng.random((6, 5)))
        assert clf.classify(img).values[1] == pytest.approx(img.data.mean())

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            LinearClassifier(np.array([[-0.1, 0.2]]))

    def test_rejects_weights_summing_past_one(self):
        with pytest.raises(ValueError):
            LinearClassifier(np.full((2, 2), 0.3))

    def test_shape_mismatch(self):
        clf = LinearClassifier.uniform(3, 3)
        with pytest.raises(ValueError):
            clf.classify(GrayImage(np.zeros((2, 2))))


class TestRegionPresenceClassifier:
    def test_visible_vs_occluded(self):
        region = np.zeros((4, 4), dtype=bool)
        region[:2, :2] = True
        clf = RegionPresenceClassifier(BinaryMask(region))
        lit = GrayImage(np.full((4, 4), 0.9))
        assert clf.classify(lit).values == (0.0, 1.0)
        half = np.full((4, 4), 0.9)
        half[0, 0] = 0.0  # one region pixel dark: region no longer fully visible
        assert clf.classify(GrayImage(half)).values == (1.0, 0.0)

    def test_empty_region_rejected(self):
        with pytest.raises(ValueError):
            RegionPresenceClassifier(BinaryMask(np.zeros((3, 3), dtype=bool)))


class TestBrightnessThreshold:
    def test_threshold(self):
        clf = BrightnessThresholdClassifier(0.5)
        assert clf.classify(GrayImage(np.full((3, 3), 0.6))).top_class() == 1
        assert clf.classify(GrayImage(np.full((3, 3), 0.4))).top_class() == 0

    def test_mean_exactly_at_threshold_is_positive(self):
        clf = BrightnessThresholdClassifier(0.5)
        assert clf.classify(GrayImage(np.full((3, 3), 0.5))).top_class() == 1


class TestBuildSynthetic:
    def test_dispatch(self):
        spec = SyntheticClassifierSpec("constant", {"scores": (0.1, 0.9)})
        assert isinstance(build_synthetic(spec), ConstantClassifier)
        spec = SyntheticClassifierSpec("brightness_threshold", {"threshold": 0.2})
        assert isinstance(build_synthetic(spec), BrightnessThresholdClassifier)
        region = np.ones((2, 2), dtype=bool)
        spec = SyntheticClassifierSpec("superpixel_oracle", {"region": region})
        assert isinstance(build_synthetic(spec), RegionPresenceClassifier)
        spec = SyntheticClassifierSpec("linear", {"weights": np.full((2, 2), 0.1)})
        assert isinstance(build_synthetic(spec), LinearClassifier)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SyntheticClassifierSpec("wavelet", {})
