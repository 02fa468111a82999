"""Prediction stability under test-time augmentation.

Run the classifier on j deterministically perturbed copies of the image,
take the argmax vote of each, and measure how concentrated the votes are.
The predictive reliability score (PRS) is 1 minus the normalized vote
entropy: 1 when every variant votes the same class, 0 when the votes are
uniform over all classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .classifiers import Classifier
from .errors import ClassifierError
from .images import GrayImage

_KINDS_WITH_AMOUNT = ("rotate", "brightness", "gamma", "scale")
_KINDS_BARE = ("identity", "hflip")


@dataclass(frozen=True)
class Transform:
    """One deterministic perturbation: identity, hflip, rotate(deg),
    brightness(xfactor), gamma(exponent), or scale(xfactor)."""

    kind: str
    amount: float | None = None

    def __post_init__(self):
        if self.kind in _KINDS_BARE:
            if self.amount is not None:
                raise ValueError(f"{self.kind} takes no amount")
        elif self.kind in _KINDS_WITH_AMOUNT:
            if self.amount is None or not np.isfinite(self.amount):
                raise ValueError(f"{self.kind} needs a finite amount")
            if self.kind in ("brightness", "gamma", "scale") and self.amount <= 0:
                raise ValueError(f"{self.kind} amount must be > 0, got {self.amount}")
        else:
            raise ValueError(f"unknown transform kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Transform":
        """Parse 'hflip', 'rotate:-5', 'brightness:1.1' style strings."""
        name, sep, arg = text.partition(":")
        name = name.strip()
        if not sep:
            return cls(name)
        return cls(name, float(arg))

    def __str__(self) -> str:
        if self.amount is None:
            return self.kind
        return f"{self.kind}:{self.amount:g}"


@dataclass(frozen=True)
class AugmentationSpec:
    """Ordered, non-empty list of transforms; its length is the vote count j."""

    transforms: tuple[Transform, ...]

    def __post_init__(self):
        items = tuple(self.transforms)
        if not items:
            raise ValueError("augmentation list must not be empty")
        for t in items:
            if not isinstance(t, Transform):
                raise TypeError(f"expected Transform, got {type(t).__name__}")
        object.__setattr__(self, "transforms", items)

    def __len__(self) -> int:
        return len(self.transforms)

    @classmethod
    def parse(cls, texts: Sequence[str]) -> "AugmentationSpec":
        return cls(tuple(Transform.parse(t) for t in texts))


# Vertical flip is deliberately absent: the imagery this targets carries
# orientation-bearing structure below the object of interest.
DEFAULT_AUGMENTATIONS = AugmentationSpec(
    (
        Transform("identity"),
        Transform("hflip"),
        Transform("rotate", -5.0),
        Transform("rotate", 5.0),
        Transform("brightness", 0.9),
        Transform("brightness", 1.1),
        Transform("gamma", 0.9),
        Transform("scale", 1.05),
    )
)


@dataclass(frozen=True)
class PrsBreakdown:
    """Votes, per-class vote shares, vote entropy (nats), and the score."""

    votes: tuple[int, ...]
    proportions: tuple[float, ...]
    entropy: float
    prs: float

    def __post_init__(self):
        if not self.votes:
            raise ValueError("need at least one vote")
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise ValueError(f"proportions sum to {sum(self.proportions)}, expected 1")
        max_h = math.log(len(self.proportions)) + 1e-12
        if not (0.0 <= self.entropy <= max_h):
            raise ValueError(f"entropy {self.entropy} outside [0, log C]")
        if not (0.0 <= self.prs <= 1.0):
            raise ValueError(f"prs {self.prs} outside [0, 1]")

    def summary_dict(self) -> dict:
        return {
            "prs": self.prs,
            "votes": list(self.votes),
            "proportions": list(self.proportions),
            "entropy": self.entropy,
        }


def augment(image: GrayImage, transform: Transform) -> GrayImage:
    """Apply one transform; output keeps the input's dimensions and range.

    Rotation and scaling resample bilinearly about the image center and fill
    uncovered border pixels with 0; brightness and gamma clamp to [0, 1].
    """
    data = image.data
    if transform.kind == "identity":
        return image
    if transform.kind == "hflip":
        return GrayImage._wrap(np.ascontiguousarray(data[:, ::-1]))
    if transform.kind == "rotate":
        out = ndimage.rotate(
            data, transform.amount, reshape=False, order=1, mode="constant", cval=0.0
        )
        return GrayImage._wrap(np.clip(out, 0.0, 1.0))
    if transform.kind == "brightness":
        return GrayImage._wrap(np.clip(data * transform.amount, 0.0, 1.0))
    if transform.kind == "gamma":
        return GrayImage._wrap(np.power(data, transform.amount))
    if transform.kind == "scale":
        f = transform.amount
        center = (np.array(data.shape, dtype=np.float64) - 1.0) / 2.0
        out = ndimage.affine_transform(
            data,
            matrix=np.diag([1.0 / f, 1.0 / f]),
            offset=center * (1.0 - 1.0 / f),
            order=1,
            mode="constant",
            cval=0.0,
        )
        return GrayImage._wrap(np.clip(out, 0.0, 1.0))
    raise AssertionError(transform.kind)  # unreachable after Transform validation


def predictive_reliability(
    image: GrayImage,
    classifier: Classifier,
    spec: AugmentationSpec = DEFAULT_AUGMENTATIONS,
    convention: str = "certainty",
) -> PrsBreakdown:
    """Vote-agreement score over the augmented variants.

    convention "certainty" (default) returns 1 - H/log(C), so agreement means
    reliability 1. convention "entropy" returns H/log(C) instead, for callers
    that want the raw normalized-entropy reading.
    """
    if convention not in ("certainty", "entropy"):
        raise ValueError(f"unknown convention {convention!r}")
    info = classifier.handshake()
    votes = []
    for i, transform in enumerate(spec.transforms):
        try:
            scores = classifier.classify(augment(image, transform))
        except ClassifierError as e:
            raise ClassifierError(
                f"while scoring augmented variant {i} ({transform}): {e}",
                request_id=e.request_id,
            ) from e
        votes.append(scores.top_class())

    j = len(votes)
    counts = [0] * info.class_count
    for v in votes:
        counts[v] += 1
    proportions = [c / j for c in counts]
    entropy = 0.0
    for p in proportions:
        if p > 0.0:
            entropy -= p * math.log(p)
    normalized = entropy / math.log(info.class_count)
    prs = normalized if convention == "entropy" else 1.0 - normalized
    prs = min(1.0, max(0.0, prs))  # guard the last-ulp of the uniform case
    return PrsBreakdown(
        votes=tuple(votes),
        proportions=tuple(proportions),
        entropy=entropy,
        prs=prs,
    )
