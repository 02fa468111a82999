"""Run configuration: one JSON file describing every knob of a scoring run.

Precedence is defaults < config file < environment < command-line flags; the
CLI layers the last two on top of the parsed file before validation. The
effective config serializes canonically, and its SHA-256 over that canonical
form is the fingerprint embedded in every report, so a report names the exact
configuration that produced it.

Environment overrides:
    RELIASCORE_CLASSIFIER   shell-style command line for a subprocess classifier
    RELIASCORE_WORKERS      worker process count
"""

from __future__ import annotations

import hashlib
import json
import shlex
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attribution import SamplingConfig
from .classifiers import Classifier, SyntheticClassifierSpec, build_synthetic
from .errors import ConfigError
from .rationale import ProtoRegionConfig, RationaleThresholds, SaliencyConfig
from .reliability import FusionConfig
from .superpixels import SlicParams
from .tta import AugmentationSpec, DEFAULT_AUGMENTATIONS
from .wire import SubprocessClassifier

ENV_CLASSIFIER = "RELIASCORE_CLASSIFIER"
ENV_WORKERS = "RELIASCORE_WORKERS"


@dataclass(frozen=True)
class ClassifierEndpoint:
    """Where scores come from: an external process or a builtin synthetic."""

    kind: str
    argv: tuple[str, ...] = ()
    synthetic: SyntheticClassifierSpec | None = None
    timeout: float = 30.0
    clamp_scores: bool = False

    def __post_init__(self):
        if self.kind == "subprocess":
            if not self.argv:
                raise ValueError("subprocess classifier needs a command line")
        elif self.kind == "synthetic":
            if self.synthetic is None:
                raise ValueError("synthetic classifier needs a spec")
        else:
            raise ValueError(f"classifier kind must be subprocess or synthetic, got {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")

    def connect(self) -> Classifier:
        """Instantiate the classifier; callers close() subprocess-backed ones."""
        if self.kind == "subprocess":
            return SubprocessClassifier(
                list(self.argv), timeout=self.timeout, clamp_scores=self.clamp_scores
            )
        spec = self.synthetic
        assert spec is not None
        params = dict(spec.parameters)
        if spec.kind == "linear" and "uniform" in params:
            h, w = params.pop("uniform")
            params["weights"] = np.full((int(h), int(w)), 1.0 / (int(h) * int(w)))
        return build_synthetic(SyntheticClassifierSpec(spec.kind, params))


@dataclass(frozen=True)
class RunConfig:
    """Everything a scoring run depends on, in one immutable bundle."""

    classifier: ClassifierEndpoint
    output_dir: Path = Path("runs/out")
    seed: int = 0
    workers: int = 1
    slic: SlicParams = SlicParams()
    sampling: SamplingConfig = SamplingConfig()
    proto: ProtoRegionConfig = ProtoRegionConfig()
    saliency: SaliencyConfig = SaliencyConfig()
    augmentations: AugmentationSpec = DEFAULT_AUGMENTATIONS
    fusion: FusionConfig = FusionConfig()
    thresholds: RationaleThresholds = RationaleThresholds()
    prs_convention: str = "certainty"
    remap_overlap: bool = False
    overlay_alpha: float = 0.5
    target_class: int | None = None  # None: attribute the predicted class

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.prs_convention not in ("certainty", "entropy"):
            raise ValueError(f"unknown prs_convention {self.prs_convention!r}")
        if not (0.0 <= self.overlay_alpha <= 1.0):
            raise ValueError(f"overlay_alpha must be in [0, 1], got {self.overlay_alpha}")

    def effective_slic(self) -> SlicParams:
        return replace(self.slic, seed=self.seed)

    def effective_sampling(self) -> SamplingConfig:
        """The sampling config with the global seed and this run's slic knobs."""
        return replace(self.sampling, seed=self.seed, slic=self.effective_slic())

    def to_json_dict(self) -> dict:
        cls: dict = {"kind": self.classifier.kind}
        if self.classifier.kind == "subprocess":
            cls["argv"] = list(self.classifier.argv)
        else:
            assert self.classifier.synthetic is not None
            cls["synthetic"] = {
                "kind": self.classifier.synthetic.kind,
                "parameters": _jsonable(self.classifier.synthetic.parameters),
            }
        cls["timeout"] = self.classifier.timeout
        cls["clamp_scores"] = self.classifier.clamp_scores
        return {
            "classifier": cls,
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "workers": self.workers,
            "slic": {
                "target_area": self.slic.target_area,
                "iterations": self.slic.iterations,
                "compactness": self.slic.compactness,
            },
            "sampling": {
                "sample_count": self.sampling.sample_count,
                "inclusion_prob": self.sampling.inclusion_prob,
                "mode": self.sampling.mode,
                "cell_size": self.sampling.cell_size,
                "batch_size": self.sampling.batch_size,
            },
            "proto": {
                "area_factor": self.proto.area_factor,
                "shift_down": self.proto.shift_down,
            },
            "saliency": {
                "s_mode": self.saliency.s_mode,
                "fraction": self.saliency.fraction,
            },
            "augmentations": [str(t) for t in self.augmentations.transforms],
            "fusion": {"mu": self.fusion.mu},
            "thresholds": {"low": self.thresholds.low, "high": self.thresholds.high},
            "prs_convention": self.prs_convention,
            "remap_overlap": self.remap_overlap,
            "overlay_alpha": self.overlay_alpha,
            "target_class": self.target_class,
        }

    def fingerprint(self) -> str:
        """Digest of every parameter that determines the scores.

        Where results land (output_dir) and how work is scheduled (workers)
        cannot change a single output bit, so they stay out of the digest:
        two runs of one configuration must fingerprint identically.
        """
        payload = self.to_json_dict()
        payload.pop("output_dir")
        payload.pop("workers")
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    return obj


def _reject_unknown(section: dict, allowed: tuple[str, ...], context: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(unknown)}")


def _classifier_from_dict(raw: dict) -> ClassifierEndpoint:
    _reject_unknown(
        raw, ("kind", "argv", "synthetic", "timeout", "clamp_scores"), "classifier"
    )
    kind = raw.get("kind")
    synthetic = None
    if raw.get("synthetic") is not None:
        sub = raw["synthetic"]
        _reject_unknown(sub, ("kind", "parameters"), "classifier.synthetic")
        synthetic = SyntheticClassifierSpec(
            sub.get("kind", ""), dict(sub.get("parameters", {}))
        )
    return ClassifierEndpoint(
        kind=str(kind),
        argv=tuple(raw.get("argv", ())),
        synthetic=synthetic,
        timeout=float(raw.get("timeout", 30.0)),
        clamp_scores=bool(raw.get("clamp_scores", False)),
    )


def run_config_from_dict(raw: dict) -> RunConfig:
    """Build and validate a RunConfig from parsed JSON, rejecting typos."""
    allowed = (
        "classifier", "output_dir", "seed", "workers", "slic", "sampling",
        "proto", "saliency", "augmentations", "fusion", "thresholds",
        "prs_convention", "remap_overlap", "overlay_alpha", "target_class",
    )
    _reject_unknown(raw, allowed, "config")
    if "classifier" not in raw:
        raise ConfigError("config must name a classifier (key 'classifier')")
    try:
        classifier = _classifier_from_dict(dict(raw["classifier"]))

        slic_raw = dict(raw.get("slic", {}))
        _reject_unknown(slic_raw, ("target_area", "iterations", "compactness"), "slic")
        slic = SlicParams(
            target_area=int(slic_raw.get("target_area", SlicParams.target_area)),
            iterations=int(slic_raw.get("iterations", SlicParams.iterations)),
            compactness=float(slic_raw.get("compactness", SlicParams.compactness)),
        )

        samp_raw = dict(raw.get("sampling", {}))
        _reject_unknown(
            samp_raw,
            ("sample_count", "inclusion_prob", "mode", "cell_size", "batch_size"),
            "sampling",
        )
        cell = samp_raw.get("cell_size")
        sampling = SamplingConfig(
            sample_count=int(samp_raw.get("sample_count", 4000)),
            inclusion_prob=float(samp_raw.get("inclusion_prob", 0.5)),
            mode=str(samp_raw.get("mode", "superpixel")),
            cell_size=None if cell is None else int(cell),
            batch_size=int(samp_raw.get("batch_size", 32)),
        )

        proto_raw = dict(raw.get("proto", {}))
        _reject_unknown(proto_raw, ("area_factor", "shift_down"), "proto")
        shift = proto_raw.get("shift_down")
        proto = ProtoRegionConfig(
            area_factor=float(proto_raw.get("area_factor", 1.21)),
            shift_down=None if shift is None else int(shift),
        )

        sal_raw = dict(raw.get("saliency", {}))
        _reject_unknown(sal_raw, ("s_mode", "fraction"), "saliency")
        fraction = sal_raw.get("fraction")
        saliency = SaliencyConfig(
            s_mode=str(sal_raw.get("s_mode", "match_proto")),
            fraction=None if fraction is None else float(fraction),
        )

        if "augmentations" in raw:
            augmentations = AugmentationSpec.parse(list(raw["augmentations"]))
        else:
            augmentations = DEFAULT_AUGMENTATIONS

        fusion_raw = dict(raw.get("fusion", {}))
        _reject_unknown(fusion_raw, ("mu",), "fusion")
        fusion = FusionConfig(mu=float(fusion_raw.get("mu", 0.5)))

        thr_raw = dict(raw.get("thresholds", {}))
        _reject_unknown(thr_raw, ("low", "high"), "thresholds")
        thresholds = RationaleThresholds(
            low=float(thr_raw.get("low", 0.1)), high=float(thr_raw.get("high", 0.5))
        )

        target = raw.get("target_class")
        return RunConfig(
            classifier=classifier,
            output_dir=Path(raw.get("output_dir", "runs/out")),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            slic=slic,
            sampling=sampling,
            proto=proto,
            saliency=saliency,
            augmentations=augmentations,
            fusion=fusion,
            thresholds=thresholds,
            prs_convention=str(raw.get("prs_convention", "certainty")),
            remap_overlap=bool(raw.get("remap_overlap", False)),
            overlay_alpha=float(raw.get("overlay_alpha", 0.5)),
            target_class=None if target is None else int(target),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config_file(path: str | Path) -> dict:
    """Parse the JSON config file into a raw dict (validation happens later)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def apply_env_overrides(raw: dict, env: dict) -> dict:
    """Layer RELIASCORE_* variables over a raw config dict (returns a copy)."""
    out = dict(raw)
    if env.get(ENV_CLASSIFIER):
        out["classifier"] = {
            "kind": "subprocess",
            "argv": shlex.split(env[ENV_CLASSIFIER]),
        }
    if env.get(ENV_WORKERS):
        try:
            out["workers"] = int(env[ENV_WORKERS])
        except ValueError as e:
            raise ConfigError(f"{ENV_WORKERS} must be an integer: {e}") from e
    return out


def echo_config(config: RunConfig, path: str | Path) -> None:
    """Write the effective config and its fingerprint next to the outputs."""
    payload = {"fingerprint": config.fingerprint(), "config": config.to_json_dict()}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
