"""Black-box classifier contract and the synthetic classifiers used to test it.

A classifier is anything with ``handshake``, ``classify`` and ``classify_batch``.
The synthetic implementations here have closed-form behaviour, so attribution
and uncertainty code can be checked against hand-computed expectations. The
subprocess-backed client for external model runtimes lives in ``wire``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .images import BinaryMask, GrayImage

_SYNTHETIC_KINDS = ("constant", "linear", "superpixel_oracle", "brightness_threshold")


@dataclass(frozen=True)
class ClassScores:
    """One probability per class, as emitted by a classifier for one image."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise ValueError(f"need at least two class scores, got {len(vals)}")
        for v in vals:
            if not np.isfinite(v):
                raise ValueError(f"non-finite class score {v}")
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"class score {v} outside [0, 1]")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def top_class(self) -> int:
        """Index of the highest score; ties go to the lowest class index."""
        return max(range(len(self.values)), key=lambda i: self.values[i])


@dataclass(frozen=True)
class ClassifierInfo:
    """Static facts a classifier declares once, before any scoring."""

    class_count: int
    input_channels: int = 1
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.input_channels not in (1, 3):
            raise ValueError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.class_names is not None:
            names = tuple(str(n) for n in self.class_names)
            if len(names) != self.class_count:
                raise ValueError(
                    f"{len(names)} class names for {self.class_count} classes"
                )
            object.__setattr__(self, "class_names", names)


@runtime_checkable
class Classifier(Protocol):
    """What the scoring pipeline requires from any classifier backend.

    ``parallel_safe`` tells the attribution engine whether instances may be
    copied into worker processes; anything holding sockets or subprocesses
    must say False and will be driven through ``classify_batch`` instead.
    """

    parallel_safe: bool

    def handshake(self) -> ClassifierInfo: ...

    def classify(self, image: GrayImage) -> ClassScores: ...

    def classify_batch(self, images: Sequence[GrayImage]) -> list[ClassScores]: ...


class _PureClassifier:
    """Base for stateless in-process classifiers; batch = map, fork is safe."""

    parallel_safe = True

    def classify(self, image: GrayImage) -> ClassScores:  # pragma: no cover
        raise NotImplementedError

    def handshake(self) -> ClassifierInfo:  # pragma: no cover
        raise NotImplementedError

    def classify_batch(self, images: Sequence[GrayImage]) -> list[ClassScores]:
        return [self.classify(im) for im in images]


class ConstantClassifier(_PureClassifier):
    """Ignores the pixels and always answers with the same scores."""

    def __init__(self, scores: Sequence[float]):
        self._scores = ClassScores(tuple(scores))

    def handshake(self) -> ClassifierInfo:
        return ClassifierInfo(class_count=len(self._scores))

    def classify(self, image: GrayImage) -> ClassScores:
        return self._scores


class LinearClassifier(_PureClassifier):
    """Two-class classifier whose positive score is a weighted pixel sum.

    score[1] = sum(weights * pixels), score[0] = 1 - score[1]. Weights must be
    nonnegative and sum to at most 1 so every image in [0,1] stays in range.
    The per-pixel additivity makes whole-map attribution checkable in closed
    form: occluding a region removes exactly that region's weighted mass.
    """

    def __init__(self, weights: np.ndarray):
        w = np.array(weights, dtype=np.float64, copy=True, order="C")
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        if float(w.sum()) > 1.0 + 1e-12:
            raise ValueError(f"weights sum to {w.sum()}, must be <= 1")
        w.flags.writeable = False
        self.weights = w

    @classmethod
    def uniform(cls, height: int, width: int) -> "LinearClassifier":
        """Weights 1/(H*W) everywhere; score[1] is the mean intensity."""
        return cls(np.full((height, width), 1.0 / (height * width)))

    def handshake(self) -> ClassifierInfo:
        return ClassifierInfo(class_count=2)

    def classify(self, image: GrayImage) -> ClassScores:
        if image.shape != self.weights.shape:
            raise ValueError(
                f"image shape {image.shape} does not match weights {self.weights.shape}"
            )
        s = min(1.0, float((self.weights * image.data).sum()))
        return ClassScores((1.0 - s, s))


class RegionPresenceClassifier(_PureClassifier):
    """Answers 1 for class 1 exactly when a fixed region is fully visible.

    A pixel counts as visible when its intensity is nonzero, matching the
    zero-fill convention of occlusion masking. Feed it images that are
    strictly positive inside the region, and its score is a pure indicator
    of whether an occlusion mask kept every pixel of that region.
    """

    def __init__(self, region: BinaryMask):
        if region.is_empty():
            raise ValueError("target region must be non-empty")
        self.region = region

    def handshake(self) -> ClassifierInfo:
        return ClassifierInfo(class_count=2)

    def classify(self, image: GrayImage) -> ClassScores:
        if image.shape != self.region.shape:
            raise ValueError(
                f"image shape {image.shape} does not match region {self.region.shape}"
            )
        present = bool((image.data[self.region.bits] > 0.0).all())
        s = 1.0 if present else 0.0
        return ClassScores((1.0 - s, s))


class BrightnessThresholdClassifier(_PureClassifier):
    """Hard two-class decision on mean intensity; useful for flipping votes.

    Mean intensity >= threshold scores (0, 1), otherwise (1, 0). Brightness
    perturbations near the threshold change the decision, which is exactly
    what augmentation-disagreement tests need.
    """

    def __init__(self, threshold: float):
        if not (0.0 < threshold < 1.0):
            raise ValueError(f"threshold must be in (0, 1), got {threshold}")
        self.threshold = float(threshold)

    def handshake(self) -> ClassifierInfo:
        return ClassifierInfo(class_count=2)

    def classify(self, image: GrayImage) -> ClassScores:
        s = 1.0 if float(image.data.mean()) >= self.threshold else 0.0
        return ClassScores((1.0 - s, s))


@dataclass(frozen=True)
class SyntheticClassifierSpec:
    """Declarative description of a synthetic classifier, e.g. from a config."""

    kind: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _SYNTHETIC_KINDS:
            raise ValueError(
                f"unknown synthetic classifier kind {self.kind!r}; "
                f"expected one of {_SYNTHETIC_KINDS}"
            )


def build_synthetic(spec: SyntheticClassifierSpec) -> Classifier:
    """Instantiate the classifier a SyntheticClassifierSpec describes."""
    p = spec.parameters
    if spec.kind == "constant":
        return ConstantClassifier(p["scores"])
    if spec.kind == "linear":
        return LinearClassifier(np.asarray(p["weights"], dtype=np.float64))
    if spec.kind == "superpixel_oracle":
        return RegionPresenceClassifier(BinaryMask(np.asarray(p["region"])))
    if spec.kind == "brightness_threshold":
        return BrightnessThresholdClassifier(float(p["threshold"]))
    raise AssertionError(f"unhandled kind {spec.kind}")  # unreachable after validation
