"""Per-decision reliability scoring for black-box image classifiers.

Two independent channels are computed for every classification and fused
into one score in [0, 1]:

  - the attribution channel (IRS) asks whether the pixels that drove the
    decision overlap an annotated region of interest, using occlusion
    sampling over superpixels;
  - the vote channel (PRS) asks whether the decision survives mild
    test-time augmentations, via normalized vote entropy.

The fused decision reliability score (DRS) is mu * IRS + (1 - mu) * PRS.
Calibration of any score channel against observed accuracy is measured with
an adaptive equal-count binning of the expected calibration error.
"""

from .attribution import (
    AttributionMap,
    MaskSample,
    SamplingConfig,
    attribute,
    iter_mask_samples,
    load_attribution,
    monte_carlo_stderr,
    normalize_minmax,
    save_attribution,
    save_attribution_png,
)
from .calibration import (
    CalibrationResult,
    ScoredOutcome,
    adaptive_ece,
    brute_force_binning_oracle,
    fixed_bin_ece,
)
from .classifiers import (
    BrightnessThresholdClassifier,
    Classifier,
    ClassifierInfo,
    ClassScores,
    ConstantClassifier,
    LinearClassifier,
    RegionPresenceClassifier,
    SyntheticClassifierSpec,
    build_synthetic,
)
from .config import ClassifierEndpoint, RunConfig, run_config_from_dict
from .datasets import ManifestEntry, ingest_busi, load_manifest, save_manifest
from .errors import ClassifierError, ConfigError, DataError, EvaluationError
from .images import (
    BinaryMask,
    GrayImage,
    Rect,
    RgbImage,
    apply_mask,
    load_image,
    load_mask,
    save_image,
    save_mask,
    scale_mask_about_centroid,
    shift_mask_down,
)
from .rationale import (
    IrsBreakdown,
    ProtoRegionConfig,
    RationaleCategory,
    RationaleMetrics,
    RationaleThresholds,
    SaliencyConfig,
    binarize_topk,
    build_proto_mask,
    classify_rationale,
    doctor_trusted,
    energy_ratio,
    inference_reliability,
    shared_interest,
)
from .reliability import (
    FusionConfig,
    ReliabilityReport,
    evaluate_sample,
    fuse,
    mean_drs,
)
from .render import boundary_overlay, heat_colormap, render_overlay
from .superpixels import (
    SlicParams,
    SuperpixelLabeling,
    four_connected,
    grid_labeling,
    label_areas,
    region_mask,
    save_label_png,
    slic_segment,
)
from .tta import (
    AugmentationSpec,
    DEFAULT_AUGMENTATIONS,
    PrsBreakdown,
    Transform,
    augment,
    predictive_reliability,
)
from .wire import SubprocessClassifier

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "MaskSample",
    "SamplingConfig",
    "attribute",
    "iter_mask_samples",
    "load_attribution",
    "monte_carlo_stderr",
    "normalize_minmax",
    "save_attribution",
    "save_attribution_png",
    "CalibrationResult",
    "ScoredOutcome",
    "adaptive_ece",
    "brute_force_binning_oracle",
    "fixed_bin_ece",
    "BrightnessThresholdClassifier",
    "Classifier",
    "ClassifierInfo",
    "ClassScores",
    "ConstantClassifier",
    "LinearClassifier",
    "RegionPresenceClassifier",
    "SyntheticClassifierSpec",
    "build_synthetic",
    "ClassifierEndpoint",
    "RunConfig",
    "run_config_from_dict",
    "ManifestEntry",
    "ingest_busi",
    "load_manifest",
    "save_manifest",
    "ClassifierError",
    "ConfigError",
    "DataError",
    "EvaluationError",
    "BinaryMask",
    "GrayImage",
    "Rect",
    "RgbImage",
    "apply_mask",
    "load_image",
    "load_mask",
    "save_image",
    "save_mask",
    "scale_mask_about_centroid",
    "shift_mask_down",
    "IrsBreakdown",
    "ProtoRegionConfig",
    "RationaleCategory",
    "RationaleMetrics",
    "RationaleThresholds",
    "SaliencyConfig",
    "binarize_topk",
    "build_proto_mask",
    "classify_rationale",
    "doctor_trusted",
    "energy_ratio",
    "inference_reliability",
    "shared_interest",
    "FusionConfig",
    "ReliabilityReport",
    "evaluate_sample",
    "fuse",
    "mean_drs",
    "boundary_overlay",
    "heat_colormap",
    "render_overlay",
    "SlicParams",
    "SuperpixelLabeling",
    "four_connected",
    "grid_labeling",
    "label_areas",
    "region_mask",
    "save_label_png",
    "slic_segment",
    "AugmentationSpec",
    "DEFAULT_AUGMENTATIONS",
    "PrsBreakdown",
    "Transform",
    "augment",
    "predictive_reliability",
    "SubprocessClassifier",
    "__version__",
]
