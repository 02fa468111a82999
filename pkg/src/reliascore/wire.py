"""Subprocess classifier client speaking line-delimited JSON over stdio.

The external process owns the model; this side owns the protocol. Requests
are pipelined and tagged with ids, replies may arrive in any order, and a
reader thread matches them back up. Every failure mode (death, garbage,
timeout, out-of-range scores) surfaces as ClassifierError with the request id
that was in flight.

Message shapes:
  server -> client, once, unprompted:
    {"type": "hello", "classes": C, "channels": 1|3, "names": [...]}
  client -> server:
    {"type": "classify", "id": n, "width": W, "height": H, "channels": K,
     "pixels": "<base64 row-major 8-bit samples, channel-interleaved>"}
  server -> client:
    {"type": "scores", "id": n, "scores": [...]}
    {"type": "error", "id": n, "message": "..."}
"""

from __future__ import annotations

import base64
import json
import logging
import subprocess
import threading
import time
from typing import Sequence

import numpy as np

from .classifiers import ClassifierInfo, ClassScores
from .errors import ClassifierError
from .images import GrayImage

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


def encode_pixels(image: GrayImage, channels: int) -> str:
    """Quantize to 8-bit (round(v*255), clamped) and base64 the raw samples.

    With channels=3 the gray value is replicated into R, G, B interleaved.
    """
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    q = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
    if channels == 3:
        q = np.repeat(q[:, :, None], 3, axis=2)
    return base64.b64encode(q.tobytes(order="C")).decode("ascii")


def decode_pixels(width: int, height: int, channels: int, b64: str) -> np.ndarray:
    """Inverse of encode_pixels: base64 -> uint8 array of shape (H, W, K)."""
    raw = base64.b64decode(b64, validate=True)
    expected = width * height * channels
    if len(raw) != expected:
        raise ValueError(f"pixel payload holds {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)


class SubprocessClassifier:
    """Classifier backed by an external process; see module docstring.

    Not forkable (owns a live subprocess), so the attribution engine keeps it
    on the main process and batches through classify_batch instead.
    """

    parallel_safe = False

    def __init__(
        self,
        argv: Sequence[str],
        timeout: float = DEFAULT_TIMEOUT,
        clamp_scores: bool = False,
    ):
        if timeout <= 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        self._argv = list(argv)
        self._timeout = float(timeout)
        self._clamp = bool(clamp_scores)
        self._clamp_warned = False
        try:
            self._proc = subprocess.Popen(
                self._argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # let the server talk to the operator directly
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise ClassifierError(f"cannot start classifier process {self._argv!r}: {e}") from e
        self._write_lock = threading.Lock()
        self._cv = threading.Condition()
        self._replies: dict[int, dict] = {}
        self._info: ClassifierInfo | None = None
        self._dead: str | None = None
        self._next_id = 1
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # -- lifecycle -------------------------------------------------------

    def close(self) -> None:
        """Shut the subprocess down; safe to call more than once."""
        with self._cv:
            if self._dead is None:
                self._dead = "client closed the connection"
            self._cv.notify_all()
        if self._proc.stdin and not self._proc.stdin.closed:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "SubprocessClassifier":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- reader thread ---------------------------------------------------

    def _read_loop(self) -> None:
        stream = self._proc.stdout
        assert stream is not None
        fault = None
        try:
            for line in stream:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    fault = f"unparseable line from classifier: {line[:200]!r}"
                    break
                if not self._dispatch(msg):
                    fault = f"protocol violation from classifier: {line[:200]!r}"
                    break
        except (OSError, ValueError):
            fault = "classifier stdout closed unexpectedly"
        with self._cv:
            if self._dead is None:
                if fault is not None:
                    self._dead = fault
                else:
                    rc = self._proc.poll()
                    self._dead = f"classifier process exited (returncode {rc})"
            self._cv.notify_all()

    def _dispatch(self, msg: dict) -> bool:
        """Route one parsed message; False means the message was malformed."""
        if not isinstance(msg, dict):
            return False
        kind = msg.get("type")
        if kind == "hello":
            try:
                names = msg.get("names")
                info = ClassifierInfo(
                    class_count=int(msg["classes"]),
                    input_channels=int(msg.get("channels", 1)),
                    class_names=tuple(names) if names else None,
                )
            except (KeyError, TypeError, ValueError):
                return False
            with self._cv:
                if self._info is not None:
                    return False  # a second hello is out of contract
                self._info = info
                self._cv.notify_all()
            return True
        if kind in ("scores", "error"):
            rid = msg.get("id")
            if not isinstance(rid, int):
                return False
            with self._cv:
                self._replies[rid] = msg
                self._cv.notify_all()
            return True
        return False

    # -- protocol --------------------------------------------------------

    def handshake(self) -> ClassifierInfo:
        deadline = time.monotonic() + self._timeout
        with self._cv:
            while self._info is None:
                if self._dead is not None:
                    raise ClassifierError(f"no hello from classifier: {self._dead}")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ClassifierError(
                        f"classifier sent no hello within {self._timeout:.0f}s"
                    )
                self._cv.wait(remaining)
            return self._info

    def classify(self, image: GrayImage) -> ClassScores:
        return self.classify_batch([image])[0]

    def classify_batch(self, images: Sequence[GrayImage]) -> list[ClassScores]:
        info = self.handshake()
        ids: list[int] = []
        deadlines: list[float] = []
        for image in images:
            payload = {
                "type": "classify",
                "width": image.width,
                "height": image.height,
                "channels": info.input_channels,
                "pixels": encode_pixels(image, info.input_channels),
            }
            with self._write_lock:
                rid = self._next_id
                self._next_id += 1
                payload["id"] = rid
                self._send(payload, rid)
            ids.append(rid)
            deadlines.append(time.monotonic() + self._timeout)
        return [self._collect(rid, dl, info) for rid, dl in zip(ids, deadlines)]

    def _send(self, payload: dict, rid: int) -> None:
        stdin = self._proc.stdin
        assert stdin is not None
        try:
            stdin.write(json.dumps(payload, separators=(",", ":")) + "\n")
            stdin.flush()
        except (OSError, ValueError) as e:
            raise ClassifierError(
                f"cannot write to classifier process: {e}", request_id=rid
            ) from e

    def _collect(self, rid: int, deadline: float, info: ClassifierInfo) -> ClassScores:
        with self._cv:
            while rid not in self._replies:
                if self._dead is not None:
                    raise ClassifierError(self._dead, request_id=rid)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ClassifierError(
                        f"classifier reply timed out after {self._timeout:.0f}s",
                        request_id=rid,
                    )
                self._cv.wait(remaining)
            msg = self._replies.pop(rid)
        if msg["type"] == "error":
            raise ClassifierError(
                f"classifier reported: {msg.get('message', '(no message)')}",
                request_id=rid,
            )
        return self._parse_scores(msg, rid, info)

    def _parse_scores(self, msg: dict, rid: int, info: ClassifierInfo) -> ClassScores:
        raw = msg.get("scores")
        if not isinstance(raw, list) or len(raw) != info.class_count:
            raise ClassifierError(
                f"expected {info.class_count} scores, got {raw!r}", request_id=rid
            )
        try:
            vals = [float(v) for v in raw]
        except (TypeError, ValueError) as e:
            raise ClassifierError(f"non-numeric score in {raw!r}", request_id=rid) from e
        if any(not np.isfinite(v) for v in vals):
            raise ClassifierError(f"non-finite score in {vals!r}", request_id=rid)
        if any(v < 0.0 or v > 1.0 for v in vals):
            if not self._clamp:
                raise ClassifierError(
                    f"score outside [0,1] in {vals!r} (pass clamp_scores to accept)",
                    request_id=rid,
                )
            if not self._clamp_warned:
                log.warning("clamping out-of-range classifier scores, first was %r", vals)
                self._clamp_warned = True
            vals = [min(1.0, max(0.0, v)) for v in vals]
        return ClassScores(tuple(vals))
