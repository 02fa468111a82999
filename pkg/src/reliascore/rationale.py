"""Does the classifier look where an annotator says the evidence is?

Given an attribution map and a ground-truth mask, this module builds an
enlarged context region around the mask, binarizes the attribution into a
top-s saliency mask, and scores their agreement. The headline number is the
inference reliability score (IRS) in [0, 1]: the IoU between saliency and
context region when the saliency touches the mask at all, and a small
energy-based consolation term (capped at 0.5) when it does not, so missing
the mask entirely can never outscore hitting it.

Also here: the classic overlap triple (IoU, mask coverage, saliency
coverage), a rule that buckets each decision into one of eight rationale
categories on those coverages, and a boolean "would a reviewer accept this
rationale" test.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .attribution import AttributionMap
from .images import BinaryMask, scale_mask_about_centroid, shift_mask_down


@dataclass(frozen=True)
class ProtoRegionConfig:
    """Shape of the context region grown around the ground-truth mask.

    ``area_factor`` scales the mask about its centroid; ``shift_down`` adds a
    copy displaced toward the bottom of the frame (echo artefacts in
    ultrasound sit below the lesion). ``shift_down`` None means a quarter of
    the mask's bounding-box height, rounded.
    """

    area_factor: float = 1.21
    shift_down: int | None = None

    def __post_init__(self):
        if self.area_factor < 1.0:
            raise ValueError(f"area_factor must be >= 1, got {self.area_factor}")
        if self.shift_down is not None and self.shift_down < 0:
            raise ValueError(f"shift_down must be >= 0, got {self.shift_down}")


@dataclass(frozen=True)
class SaliencyConfig:
    """How many attribution pixels count as 'where the model looked'.

    match_proto picks as many pixels as the context region holds, so perfect
    agreement can reach score 1. fixed_fraction takes a constant share of the
    image instead.
    """

    s_mode: str = "match_proto"
    fraction: float | None = None

    def __post_init__(self):
        if self.s_mode not in ("match_proto", "fixed_fraction"):
            raise ValueError(f"unknown s_mode {self.s_mode!r}")
        if self.s_mode == "fixed_fraction":
            if self.fraction is None or not (0.0 < self.fraction <= 1.0):
                raise ValueError(
                    f"fixed_fraction needs fraction in (0, 1], got {self.fraction}"
                )


@dataclass(frozen=True)
class RationaleMetrics:
    """Overlap of ground truth G and saliency S: IoU plus both coverages."""

    iou: float
    gtc: float  # |G ∩ S| / |G|, how much of the truth the saliency covers
    sc: float  # |G ∩ S| / |S|, how much of the saliency is on the truth

    def __post_init__(self):
        for name, v in (("iou", self.iou), ("gtc", self.gtc), ("sc", self.sc)):
            if not np.isfinite(v) or not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


class RationaleCategory(Enum):
    HUMAN_ALIGNED = "human_aligned"
    SUFFICIENT_SUBSET = "sufficient_subset"
    SUFFICIENT_CONTEXT = "sufficient_context"
    CONTEXT_DEPENDENT = "context_dependent"
    CONFUSER = "confuser"
    INSUFFICIENT_SUBSET = "insufficient_subset"
    DISTRACTOR = "distractor"
    CONTEXT_CONFUSION = "context_confusion"


@dataclass(frozen=True)
class RationaleThresholds:
    """Cutoffs splitting each coverage into low / mid / high bands."""

    low: float = 0.1
    high: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.low < self.high <= 1.0):
            raise ValueError(
                f"need 0 < low < high <= 1, got low={self.low} high={self.high}"
            )

    def band(self, v: float) -> int:
        if v >= self.high:
            return 2
        if v < self.low:
            return 0
        return 1


# (gtc band, sc band) -> category; bands are 0=low, 1=mid, 2=high.
_CATEGORY_GRID = {
    (2, 2): RationaleCategory.HUMAN_ALIGNED,
    (1, 2): RationaleCategory.SUFFICIENT_SUBSET,
    (0, 2): RationaleCategory.SUFFICIENT_SUBSET,
    (2, 1): RationaleCategory.CONTEXT_DEPENDENT,
    (2, 0): RationaleCategory.SUFFICIENT_CONTEXT,
    (1, 1): RationaleCategory.CONFUSER,
    (1, 0): RationaleCategory.CONTEXT_CONFUSION,
    (0, 1): RationaleCategory.INSUFFICIENT_SUBSET,
    (0, 0): RationaleCategory.DISTRACTOR,
}


@dataclass(frozen=True, eq=False)
class IrsBreakdown:
    """Everything inference_reliability computed on the way to its score."""

    saliency_mask: BinaryMask
    mask: BinaryMask
    proto_mask: BinaryMask
    intersection: int  # |saliency ∩ mask|
    proto_intersection: int  # |saliency ∩ proto_mask|
    mask_energy: float  # attribution mass inside the mask / total mass
    score: float
    branch: str  # "overlap" or "no_overlap"

    def __post_init__(self):
        if self.branch not in ("overlap", "no_overlap"):
            raise ValueError(f"unknown branch {self.branch!r}")
        if not (0 <= self.intersection <= self.proto_intersection):
            raise ValueError("intersection cannot exceed proto intersection")
        cap = min(self.saliency_mask.popcount, self.proto_mask.popcount)
        if self.proto_intersection > cap:
            raise ValueError("proto intersection exceeds the smaller operand")
        if not (0.0 <= self.mask_energy <= 1.0):
            raise ValueError(f"mask_energy {self.mask_energy} outside [0, 1]")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.branch == "no_overlap" and self.score > 0.5:
            raise ValueError("no_overlap scores are capped at 0.5")

    def summary_dict(self) -> dict:
        """The JSON-friendly slice that goes into per-sample reports."""
        return {
            "irs": self.score,
            "branch": self.branch,
            "saliency_pixels": self.saliency_mask.popcount,
            "proto_pixels": self.proto_mask.popcount,
            "intersection": self.intersection,
            "proto_intersection": self.proto_intersection,
            "mask_energy": self.mask_energy,
        }


def build_proto_mask(mask: BinaryMask, config: ProtoRegionConfig) -> BinaryMask:
    """Union of the mask, its centroid-scaled enlargement, and a down-shifted
    copy. Always a superset of the mask."""
    if mask.is_empty():
        raise ValueError("cannot build a context region from an empty mask")
    if config.shift_down is not None:
        h = config.shift_down
    else:
        h = round(0.25 * mask.bounding_box().height)
    out = mask
    if config.area_factor > 1.0:
        out = out | scale_mask_about_centroid(mask, config.area_factor)
    if h > 0:
        out = out | shift_mask_down(mask, h)
    return out


def binarize_topk(amap: AttributionMap, s: int) -> BinaryMask:
    """Mask of the s highest-valued pixels; popcount is exactly s.

    Ties at the cut value resolve row-major, earlier pixel wins.
    """
    n = amap.values.size
    if not (1 <= s <= n):
        raise ValueError(f"s must be in [1, {n}], got {s}")
    flat = amap.values.ravel()
    order = np.argsort(-flat, kind="stable")
    bits = np.zeros(n, dtype=bool)
    bits[order[:s]] = True
    return BinaryMask._wrap(bits.reshape(amap.shape))


def shared_interest(truth: BinaryMask, saliency: BinaryMask) -> RationaleMetrics:
    """IoU, truth coverage, and saliency coverage of two non-empty masks."""
    if truth.shape != saliency.shape:
        raise ValueError(f"dimension mismatch: {truth.shape} vs {saliency.shape}")
    if truth.is_empty() or saliency.is_empty():
        raise ValueError("shared_interest needs non-empty masks on both sides")
    inter = int(np.count_nonzero(truth.bits & saliency.bits))
    union = int(np.count_nonzero(truth.bits | saliency.bits))
    return RationaleMetrics(
        iou=inter / union,
        gtc=inter / truth.popcount,
        sc=inter / saliency.popcount,
    )


def classify_rationale(
    metrics: RationaleMetrics, thresholds: RationaleThresholds = RationaleThresholds()
) -> RationaleCategory:
    """Bucket a decision by where (gtc, sc) falls on a 3x3 band grid.

    ==========  =========  ====================
    gtc band    sc band    category
    ==========  =========  ====================
    high        high       HUMAN_ALIGNED
    mid or low  high       SUFFICIENT_SUBSET
    high        mid        CONTEXT_DEPENDENT
    high        low        SUFFICIENT_CONTEXT
    mid         mid        CONFUSER
    mid         low        CONTEXT_CONFUSION
    low         mid        INSUFFICIENT_SUBSET
    low         low        DISTRACTOR
    ==========  =========  ====================
    """
    return _CATEGORY_GRID[(thresholds.band(metrics.gtc), thresholds.band(metrics.sc))]


def doctor_trusted(saliency: BinaryMask, mask: BinaryMask, proto_mask: BinaryMask) -> bool:
    """Would a reviewer accept the rationale: most of the saliency must land
    inside the context region, and it must touch the actual mask."""
    inter = int(np.count_nonzero(saliency.bits & mask.bits))
    proto_inter = int(np.count_nonzero(saliency.bits & proto_mask.bits))
    return 2 * proto_inter > saliency.popcount and inter > 0


def energy_ratio(amap: AttributionMap, mask: BinaryMask) -> float:
    """Share of total attribution mass that falls inside the mask.

    An all-zero map has no mass anywhere, so the share is defined as 0.
    """
    if amap.shape != mask.shape:
        raise ValueError(f"dimension mismatch: {amap.shape} vs {mask.shape}")
    total = float(amap.values.sum())
    if total == 0.0:
        return 0.0
    return float(amap.values[mask.bits].sum()) / total


def inference_reliability(
    amap: AttributionMap,
    mask: BinaryMask,
    proto: ProtoRegionConfig = ProtoRegionConfig(),
    sal: SaliencyConfig = SaliencyConfig(),
    remap_overlap: bool = False,
) -> IrsBreakdown:
    """Score how well normalized attribution agrees with the annotated mask.

    When the top-s saliency intersects the mask, the score is the IoU of the
    saliency with the enlarged context region (``remap_overlap`` squeezes that
    IoU into [0.5, 1] so any overlap outranks every no-overlap score). When it
    misses the mask completely, the score is the in-mask energy share capped
    at 0.5.

    ``amap`` is expected to be min-max normalized already; the energy branch
    is scale-invariant but the top-s cut is what the normalization defines.
    """
    if amap.shape != mask.shape:
        raise ValueError(f"dimension mismatch: {amap.shape} vs {mask.shape}")
    if mask.is_empty():
        raise ValueError("ground-truth mask is empty")
    proto_mask = build_proto_mask(mask, proto)
    if sal.s_mode == "match_proto":
        s = proto_mask.popcount
    else:
        s = min(amap.values.size, max(1, round(sal.fraction * amap.values.size)))
    saliency = binarize_topk(amap, s)

    inter = int(np.count_nonzero(saliency.bits & mask.bits))
    proto_inter = int(np.count_nonzero(saliency.bits & proto_mask.bits))
    mask_energy = energy_ratio(amap, mask)

    if inter > 0:
        union = saliency.popcount + proto_mask.popcount - proto_inter
        iou = proto_inter / union
        score = 0.5 + 0.5 * iou if remap_overlap else iou
        branch = "overlap"
    else:
        score = min(mask_energy, 0.5)
        branch = "no_overlap"
    return IrsBreakdown(
        saliency_mask=saliency,
        mask=mask,
        proto_mask=proto_mask,
        intersection=inter,
        proto_intersection=proto_inter,
        mask_energy=mask_energy,
        score=score,
        branch=branch,
    )
