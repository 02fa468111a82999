"""Fuse the two reliability channels and assemble per-sample reports.

The decision reliability score (DRS) is the convex combination
mu * irs + (1 - mu) * prs of the attribution-agreement channel and the
augmentation-stability channel. evaluate_sample runs the whole pipeline for
one image and returns a report that serializes to one JSON object; a run's
reports, one per line, form its output file.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .attribution import SamplingConfig, attribute, normalize_minmax
from .classifiers import Classifier
from .errors import EvaluationError
from .images import BinaryMask, GrayImage
from .rationale import (
    IrsBreakdown,
    ProtoRegionConfig,
    RationaleCategory,
    RationaleMetrics,
    RationaleThresholds,
    SaliencyConfig,
    classify_rationale,
    doctor_trusted,
    inference_reliability,
    shared_interest,
)
from .tta import AugmentationSpec, DEFAULT_AUGMENTATIONS, PrsBreakdown, predictive_reliability


@dataclass(frozen=True)
class FusionConfig:
    """Weight on the attribution channel; the rest goes to the vote channel."""

    mu: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"mu must be in [0, 1], got {self.mu}")


def fuse(irs: float, prs: float, config: FusionConfig = FusionConfig()) -> float:
    """drs = mu * irs + (1 - mu) * prs, written exactly like that."""
    for name, v in (("irs", irs), ("prs", prs)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return config.mu * irs + (1.0 - config.mu) * prs


@dataclass(frozen=True, eq=False)
class ReliabilityReport:
    """Everything the pipeline concluded about one sample."""

    sample_id: str
    predicted_class: int
    scores: tuple[float, ...]
    label: int | None
    correct: bool | None
    irs: IrsBreakdown
    prs: PrsBreakdown
    drs: float
    rationale: RationaleMetrics
    category: RationaleCategory
    trusted: bool
    fingerprint: str

    def to_json_dict(self) -> dict:
        """Flat JSON-ready dict; key order is the file format, keep it stable."""
        return {
            "sample_id": self.sample_id,
            "predicted_class": self.predicted_class,
            "scores": list(self.scores),
            "label": self.label,
            "correct": self.correct,
            "irs": self.irs.summary_dict(),
            "prs": self.prs.summary_dict(),
            "drs": self.drs,
            "rationale": {
                "category": self.category.value,
                "iou": self.rationale.iou,
                "gtc": self.rationale.gtc,
                "sc": self.rationale.sc,
            },
            "trusted": self.trusted,
            "fingerprint": self.fingerprint,
        }


def evaluate_sample(
    image: GrayImage,
    mask: BinaryMask,
    classifier: Classifier,
    sampling: SamplingConfig,
    proto: ProtoRegionConfig = ProtoRegionConfig(),
    sal: SaliencyConfig = SaliencyConfig(),
    augmentations: AugmentationSpec = DEFAULT_AUGMENTATIONS,
    fusion: FusionConfig = FusionConfig(),
    thresholds: RationaleThresholds = RationaleThresholds(),
    label: int | None = None,
    sample_id: str = "",
    fingerprint: str = "",
    workers: int = 1,
    prs_convention: str = "certainty",
    remap_overlap: bool = False,
    target_class: int | None = None,
) -> ReliabilityReport:
    """Run classify -> attribute -> rationale -> vote stability -> fuse.

    Attribution targets the predicted class unless ``target_class`` pins one.
    Any stage failure is re-raised as EvaluationError naming the stage and
    sample, so batch callers can report and move on.
    """
    try:
        prediction = classifier.classify(image)
    except Exception as e:
        raise EvaluationError("classify", sample_id, e) from e
    predicted = prediction.top_class()
    target = predicted if target_class is None else target_class

    try:
        amap = attribute(
            image, classifier, replace(sampling, target_class=target), workers=workers
        )
        normalized = normalize_minmax(amap)
    except Exception as e:
        raise EvaluationError("attribute", sample_id, e) from e

    try:
        irs = inference_reliability(normalized, mask, proto, sal, remap_overlap)
        metrics = shared_interest(mask, irs.saliency_mask)
        category = classify_rationale(metrics, thresholds)
        trusted = doctor_trusted(irs.saliency_mask, mask, irs.proto_mask)
    except Exception as e:
        raise EvaluationError("rationale", sample_id, e) from e

    try:
        prs = predictive_reliability(image, classifier, augmentations, prs_convention)
    except Exception as e:
        raise EvaluationError("uncertainty", sample_id, e) from e

    try:
        drs = fuse(irs.score, prs.prs, fusion)
    except Exception as e:
        raise EvaluationError("fuse", sample_id, e) from e

    return ReliabilityReport(
        sample_id=sample_id,
        predicted_class=predicted,
        scores=prediction.values,
        label=label,
        correct=None if label is None else predicted == label,
        irs=irs,
        prs=prs,
        drs=drs,
        rationale=metrics,
        category=category,
        trusted=trusted,
        fingerprint=fingerprint,
    )


def mean_drs(reports: list[ReliabilityReport]) -> float:
    """Arithmetic mean of drs over a non-empty report list."""
    if not reports:
        raise ValueError("mean_drs of zero reports is undefined")
    return sum(r.drs for r in reports) / len(reports)
