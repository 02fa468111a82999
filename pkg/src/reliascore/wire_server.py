"""Reference classifier server for the stdio JSON-lines protocol.

Run as ``python -m reliascore.wire_server --kind mean``. Serves the same
synthetic behaviours as the in-process classifiers, plus failure-injection
knobs (--delay, --fail-after, --error-on-id) so client error paths can be
exercised from tests. Real model runtimes are expected to reimplement this
loop around their own inference code.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .images import load_mask
from .wire import decode_pixels


def _emit(msg: dict) -> None:
    sys.stdout.write(json.dumps(msg, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def _score(args, pixels: np.ndarray) -> list[float]:
    """Map the decoded (H, W, K) uint8 array to per-class scores."""
    if args.kind == "constant":
        return list(args.scores)
    mean = float(pixels.mean()) / 255.0
    if args.kind == "mean":
        return [1.0 - mean, mean]
    if args.kind == "brightness":
        s = 1.0 if mean >= args.threshold else 0.0
        return [1.0 - s, s]
    if args.kind == "region":
        region = args.region_bits
        if pixels.shape[:2] != region.shape:
            raise ValueError(
                f"image {pixels.shape[:2]} does not match region {region.shape}"
            )
        hit = bool((pixels.max(axis=2)[region] > 0).all())
        s = 1.0 if hit else 0.0
        return [1.0 - s, s]
    raise AssertionError(args.kind)


def _parse_args(argv: list[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--kind",
        choices=("constant", "mean", "brightness", "region"),
        default="mean",
        help="scoring behaviour to serve",
    )
    parser.add_argument(
        "--scores",
        default="0.3,0.7",
        help="comma-separated per-class scores for --kind constant",
    )
    parser.add_argument(
        "--threshold",
        type=float,
        default=0.5,
        help="mean-intensity cutoff for --kind brightness",
    )
    parser.add_argument(
        "--region-png",
        help="mask PNG naming the must-be-visible region for --kind region",
    )
    parser.add_argument("--channels", type=int, choices=(1, 3), default=1)
    parser.add_argument("--names", help="comma-separated class names for the hello")
    parser.add_argument(
        "--delay",
        type=float,
        default=0.0,
        help="seconds to sleep before each reply (timeout testing)",
    )
    parser.add_argument(
        "--fail-after",
        type=int,
        default=0,
        help="exit abruptly after this many replies (0 = never)",
    )
    parser.add_argument(
        "--error-on-id",
        type=int,
        default=0,
        help="reply with a protocol error for this request id (0 = never)",
    )
    args = parser.parse_args(argv)
    args.scores = [float(v) for v in args.scores.split(",")]
    args.region_bits = None
    if args.kind == "region":
        if not args.region_png:
            parser.error("--kind region requires --region-png")
        args.region_bits = load_mask(args.region_png).bits
    return args


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    classes = len(args.scores) if args.kind == "constant" else 2
    hello = {"type": "hello", "classes": classes, "channels": args.channels}
    if args.names:
        hello["names"] = args.names.split(",")
    _emit(hello)

    served = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            _emit({"type": "error", "id": -1, "message": "unparseable request line"})
            continue
        rid = msg.get("id", -1)
        if msg.get("type") != "classify":
            _emit({"type": "error", "id": rid, "message": f"unknown type {msg.get('type')!r}"})
            continue
        if args.delay > 0:
            time.sleep(args.delay)
        if args.error_on_id and rid == args.error_on_id:
            _emit({"type": "error", "id": rid, "message": "injected failure"})
            continue
        try:
            pixels = decode_pixels(msg["width"], msg["height"], msg["channels"], msg["pixels"])
            scores = _score(args, pixels)
        except (KeyError, TypeError, ValueError) as e:
            _emit({"type": "error", "id": rid, "message": str(e)})
            continue
        _emit({"type": "scores", "id": rid, "scores": scores})
        served += 1
        if args.fail_after and served >= args.fail_after:
            return 1  # simulate a crash mid-conversation
    return 0


if __name__ == "__main__":
    sys.exit(main())
