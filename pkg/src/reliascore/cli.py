"""Command-line entry points for the scoring pipeline.

Subcommands mirror the pipeline stages so each is runnable in isolation:
ingest, attribute, score, prs, irs, calibrate, render. Exit codes: 0 success,
1 configuration error, 2 data error, 3 classifier error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from dataclasses import replace
from pathlib import Path

from .attribution import attribute, load_attribution, normalize_minmax, save_attribution
from .calibration import ScoredOutcome, adaptive_ece, fixed_bin_ece
from .config import (
    RunConfig,
    apply_env_overrides,
    echo_config,
    load_config_file,
    run_config_from_dict,
)
from .datasets import ManifestEntry, check_files_exist, ingest_busi, load_manifest, save_manifest
from .errors import ClassifierError, ConfigError, DataError, EvaluationError
from .images import load_image, load_mask, save_image
from .rationale import inference_reliability
from .reliability import ReliabilityReport, evaluate_sample, mean_drs
from .render import render_overlay
from .tta import predictive_reliability

log = logging.getLogger(__name__)

CALIBRATION_CHANNELS = ("confidence", "prs", "drs")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--manifest", required=True, help="newline-delimited JSON manifest")
    p.add_argument("--output-dir", help="run directory for all artifacts")
    p.add_argument("--seed", type=int, help="global RNG seed")
    p.add_argument("--workers", type=int, help="worker process count")
    p.add_argument("--classifier", help="subprocess classifier command line")
    p.add_argument("--sample-count", type=int, help="occlusion sample count T")
    p.add_argument(
        "--mode", choices=("grid", "superpixel", "exhaustive"), help="sampling units"
    )
    p.add_argument("--mu", type=float, help="fusion weight on the attribution channel")
    p.add_argument(
        "--clamp-scores",
        action="store_true",
        help="clamp out-of-range classifier scores instead of failing",
    )


def _effective_config(args: argparse.Namespace) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    raw = apply_env_overrides(raw, dict(os.environ))
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.classifier:
        raw["classifier"] = {"kind": "subprocess", "argv": shlex.split(args.classifier)}
    if args.clamp_scores:
        if "classifier" not in raw:
            raise ConfigError("--clamp-scores needs a configured classifier")
        raw["classifier"]["clamp_scores"] = True
    if args.sample_count is not None:
        raw.setdefault("sampling", {})["sample_count"] = args.sample_count
    if args.mode:
        raw.setdefault("sampling", {})["mode"] = args.mode
    if args.mu is not None:
        raw.setdefault("fusion", {})["mu"] = args.mu
    return run_config_from_dict(raw)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _prepare_run_dir(config: RunConfig, *subdirs: str) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sub in subdirs:
        (out / sub).mkdir(exist_ok=True)
    echo_config(config, out / "config.echo")
    return out


def _load_pair(entry: ManifestEntry):
    image = load_image(entry.image_path)
    mask = load_mask(entry.mask_path)
    if mask.shape != image.shape:
        raise DataError(
            f"sample {entry.sample_id}: mask {mask.shape} does not match "
            f"image {image.shape}"
        )
    return image, mask


def _safe_name(sample_id: str) -> str:
    return sample_id.replace("/", "_").replace("\\", "_")


def summarize_reports(reports: list[ReliabilityReport]) -> dict:
    """Accuracy, precision, recall, F1 (positive class = 1), and mean drs."""
    labeled = [r for r in reports if r.label is not None]
    tp = sum(1 for r in labeled if r.predicted_class == 1 and r.label == 1)
    fp = sum(1 for r in labeled if r.predicted_class == 1 and r.label != 1)
    fn = sum(1 for r in labeled if r.predicted_class != 1 and r.label == 1)
    tn = len(labeled) - tp - fp - fn
    if tp + fp == 0 and tp + fn == 0:
        # No positive predictions and no positive labels: vacuously perfect.
        log.warning("no positives anywhere; precision/recall default to 1")
        precision = recall = 1.0
    else:
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    accuracy = (
        sum(1 for r in labeled if r.correct) / len(labeled) if labeled else None
    )
    return {
        "samples": len(reports),
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "mdrs": mean_drs(reports),
        "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    }


def _connect(config: RunConfig):
    try:
        return config.classifier.connect()
    except (ValueError, KeyError) as e:
        raise ConfigError(f"cannot build classifier: {e}") from e


def cmd_ingest(args: argparse.Namespace) -> int:
    entries, skipped = ingest_busi(args.root, union_dir=args.union_dir)
    manifest = Path(args.manifest) if args.manifest else Path(args.root) / "manifest.ndjson"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(entries, manifest)
    for path in skipped:
        print(f"skipped (no mask): {path}", file=sys.stderr)
    print(f"wrote {len(entries)} entries to {manifest} ({len(skipped)} skipped)")
    return 0


def cmd_attribute(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    entries = load_manifest(args.manifest)
    check_files_exist(entries)
    out = _prepare_run_dir(config, "maps", "overlays")
    classifier = _connect(config)
    try:
        sampling = config.effective_sampling()
        for entry in entries:
            image, _ = _load_pair(entry)
            if config.target_class is not None:
                target = config.target_class
            else:
                target = classifier.classify(image).top_class()
            amap = attribute(
                image,
                classifier,
                replace(sampling, target_class=target),
                workers=config.workers,
            )
            name = _safe_name(entry.sample_id)
            save_attribution(amap, out / "maps" / f"{name}.attr")
            normalized = normalize_minmax(amap)
            save_image(
                render_overlay(image, normalized, config.overlay_alpha),
                out / "overlays" / f"{name}.png",
            )
            print(f"{entry.sample_id}: attribution written (target class {target})")
    finally:
        close = getattr(classifier, "close", None)
        if close is not None:
            close()
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    entries = load_manifest(args.manifest)
    check_files_exist(entries)
    out = _prepare_run_dir(config)
    fingerprint = config.fingerprint()
    classifier = _connect(config)
    reports: list[ReliabilityReport] = []
    try:
        sampling = config.effective_sampling()
        for entry in entries:
            image, mask = _load_pair(entry)
            reports.append(
                evaluate_sample(
                    image,
                    mask,
                    classifier,
                    sampling=sampling,
                    proto=config.proto,
                    sal=config.saliency,
                    augmentations=config.augmentations,
                    fusion=config.fusion,
                    thresholds=config.thresholds,
                    label=entry.label,
                    sample_id=entry.sample_id,
                    fingerprint=fingerprint,
                    workers=config.workers,
                    prs_convention=config.prs_convention,
                    remap_overlap=config.remap_overlap,
                    target_class=config.target_class,
                )
            )
    finally:
        close = getattr(classifier, "close", None)
        if close is not None:
            close()

    lines = [
        json.dumps(r.to_json_dict(), separators=(",", ":")) for r in reports
    ]
    _write_atomic(out / "reports.ndjson", "".join(line + "\n" for line in lines))
    summary = summarize_reports(reports)
    _write_atomic(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(
        "samples={samples} accuracy={accuracy} precision={precision:.4f} "
        "recall={recall:.4f} f1={f1:.4f} mdrs={mdrs:.4f}".format(**summary)
    )
    return 0


def cmd_prs(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    entries = load_manifest(args.manifest)
    check_files_exist(entries)
    out = _prepare_run_dir(config)
    classifier = _connect(config)
    lines = []
    try:
        for entry in entries:
            image = load_image(entry.image_path)
            breakdown = predictive_reliability(
                image, classifier, config.augmentations, config.prs_convention
            )
            lines.append(
                json.dumps(
                    {"sample_id": entry.sample_id, **breakdown.summary_dict()},
                    separators=(",", ":"),
                )
            )
            print(f"{entry.sample_id}: prs={breakdown.prs:.4f}")
    finally:
        close = getattr(classifier, "close", None)
        if close is not None:
            close()
    _write_atomic(out / "prs.ndjson", "".join(line + "\n" for line in lines))
    return 0


def cmd_irs(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    entries = load_manifest(args.manifest)
    check_files_exist(entries)
    out = _prepare_run_dir(config)
    classifier = _connect(config)
    lines = []
    try:
        sampling = config.effective_sampling()
        for entry in entries:
            image, mask = _load_pair(entry)
            if config.target_class is not None:
                target = config.target_class
            else:
                target = classifier.classify(image).top_class()
            amap = attribute(
                image,
                classifier,
                replace(sampling, target_class=target),
                workers=config.workers,
            )
            breakdown = inference_reliability(
                normalize_minmax(amap),
                mask,
                config.proto,
                config.saliency,
                config.remap_overlap,
            )
            lines.append(
                json.dumps(
                    {"sample_id": entry.sample_id, **breakdown.summary_dict()},
                    separators=(",", ":"),
                )
            )
            print(f"{entry.sample_id}: irs={breakdown.score:.4f} ({breakdown.branch})")
    finally:
        close = getattr(classifier, "close", None)
        if close is not None:
            close()
    _write_atomic(out / "irs.ndjson", "".join(line + "\n" for line in lines))
    return 0


def _calibration_inputs(reports: list[dict], channel: str) -> list[ScoredOutcome]:
    outcomes = []
    for i, r in enumerate(reports):
        if r.get("correct") is None:
            raise DataError(
                f"report {i} has no correctness flag; calibration needs labeled runs"
            )
        if channel == "confidence":
            score = r["scores"][r["predicted_class"]]
        elif channel == "prs":
            score = r["prs"]["prs"]
        else:
            score = r["drs"]
        outcomes.append(ScoredOutcome(score=float(score), correct=bool(r["correct"])))
    return outcomes


def cmd_calibrate(args: argparse.Namespace) -> int:
    path = Path(args.reports)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DataError(f"reports file not found: {path}") from e
    try:
        reports = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not newline-delimited JSON: {e}") from e
    if len(reports) < 2:
        raise DataError(f"calibration needs at least 2 reports, found {len(reports)}")

    channels = CALIBRATION_CHANNELS if args.channel == "all" else (args.channel,)
    result: dict = {"channels": {}}
    for channel in channels:
        outcomes = _calibration_inputs(reports, channel)
        try:
            entry = {"adaptive": adaptive_ece(outcomes).to_json_dict()}
            if args.bins is not None:
                entry["fixed"] = fixed_bin_ece(outcomes, args.bins).to_json_dict()
        except ValueError as e:
            raise ConfigError(f"cannot calibrate {channel}: {e}") from e
        result["channels"][channel] = entry
        print(f"{channel}: ece={entry['adaptive']['ece']:.5f} B={entry['adaptive']['bin_count']}")
    out = Path(args.out) if args.out else path.parent / "calib.json"
    _write_atomic(out, json.dumps(result, indent=2) + "\n")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    image = load_image(args.image)
    amap = load_attribution(args.attribution)
    overlay = render_overlay(image, normalize_minmax(amap), args.alpha)
    save_image(overlay, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reliascore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a two-class image/mask tree into a manifest")
    p.add_argument("root", help="dataset root with benign/ and malignant/ folders")
    p.add_argument("--manifest", help="output manifest path (default <root>/manifest.ndjson)")
    p.add_argument("--union-dir", help="where multi-mask unions are written")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("attribute", help="write attribution maps and overlays")
    _add_run_flags(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("score", help="full per-sample reliability reports")
    _add_run_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prs", help="vote-stability channel only")
    _add_run_flags(p)
    p.set_defaults(func=cmd_prs)

    p = sub.add_parser("irs", help="attribution-agreement channel only")
    _add_run_flags(p)
    p.set_defaults(func=cmd_irs)

    p = sub.add_parser("calibrate", help="adaptive calibration error over a reports file")
    p.add_argument("--reports", required=True, help="reports.ndjson from the score command")
    p.add_argument(
        "--channel",
        choices=("all",) + CALIBRATION_CHANNELS,
        default="all",
        help="which score channel to calibrate",
    )
    p.add_argument("--bins", type=int, help="also compute a fixed-bin baseline")
    p.add_argument("--out", help="output JSON path (default calib.json beside reports)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("render", help="overlay a stored attribution map on its image")
    p.add_argument("--image", required=True)
    p.add_argument("--attribution", required=True, help=".attr file from the attribute command")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ClassifierError as e:
        print(f"classifier error: {e}", file=sys.stderr)
        return 3
    except EvaluationError as e:
        print(f"evaluation error: {e}", file=sys.stderr)
        if isinstance(e.cause, ClassifierError):
            return 3
        if isinstance(e.cause, DataError):
            return 2
        return 1


if __name__ == "__main__":
    sys.exit(main())
