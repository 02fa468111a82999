"""Occlusion-sampling attribution over grid cells or superpixel units.

The map is the sample mean of score-weighted binary masks: draw T random
subsets of the units, occlude everything outside the subset (fill 0), score
each occluded image for the target class, and average score * mask over the
T samples. Three unit regimes:

  grid        square cells, the classic coarse baseline
  superpixel  units from slic_segment, so attribution follows image structure
  exhaustive  every one of the 2^K subsets once (K <= 20); the exact
              expectation the random modes estimate, used as an oracle

Bitwise determinism is a hard requirement: the keep matrix comes from one
seeded generator in sample order, scores are accumulated in sample order on
the coordinating process, and worker processes run the same numpy expressions
as the serial path. Worker count therefore never changes the output bits.
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .classifiers import Classifier
from .errors import ClassifierError, DataError
from .images import BinaryMask, GrayImage, save_image
from .superpixels import SlicParams, SuperpixelLabeling, grid_labeling, slic_segment

log = logging.getLogger(__name__)

ATTR_MAGIC = b"ATTR"
EXHAUSTIVE_UNIT_LIMIT = 20

_MODES = ("grid", "superpixel", "exhaustive")


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """Per-pixel nonnegative importance values, same shape as the image."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"values must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("attribution values must be finite")
        if float(arr.min()) < 0.0:
            raise ValueError("attribution values must be nonnegative")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "AttributionMap":
        obj = object.__new__(cls)
        arr.flags.writeable = False
        object.__setattr__(obj, "values", arr)
        return obj

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class SamplingConfig:
    """How to draw occlusion samples.

    ``sample_count`` is T for the random modes; exhaustive mode enumerates all
    2^K subsets and ignores it. ``cell_size`` applies to grid mode and
    defaults to ceil(sqrt(slic.target_area)) so grid and superpixel units
    cover comparable areas. ``batch_size`` is how many occluded images go to
    the classifier per call; it is fixed ahead of time so that splitting work
    across processes cannot change batch boundaries.
    """

    sample_count: int = 4000
    inclusion_prob: float = 0.5
    seed: int = 0
    target_class: int = 1
    mode: str = "superpixel"
    cell_size: int | None = None
    slic: SlicParams = field(default_factory=SlicParams)
    batch_size: int = 32

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")
        if not (0.0 < self.inclusion_prob < 1.0):
            raise ValueError(f"inclusion_prob must be in (0, 1), got {self.inclusion_prob}")
        if self.target_class < 0:
            raise ValueError(f"target_class must be >= 0, got {self.target_class}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.cell_size is not None and self.cell_size < 1:
            raise ValueError(f"cell_size must be >= 1, got {self.cell_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def effective_cell_size(self) -> int:
        if self.cell_size is not None:
            return self.cell_size
        return math.ceil(math.sqrt(self.slic.target_area))


@dataclass(frozen=True, eq=False)
class MaskSample:
    """One occlusion draw: the kept-pixels mask and the classifier's score."""

    mask: BinaryMask
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
            raise ValueError(f"sample score {self.score} outside [0, 1]")


def units_for(image: GrayImage, config: SamplingConfig) -> SuperpixelLabeling:
    """The unit partition a config implies for an image (grid or superpixels)."""
    if config.mode == "grid":
        return grid_labeling(image.height, image.width, config.effective_cell_size())
    return slic_segment(image, config.slic)


def _keep_matrix(config: SamplingConfig, unit_count: int) -> np.ndarray:
    """(T, K) boolean keep decisions, reproducible from the seed alone.

    Random modes fill the matrix from a single generator in row-major order,
    so sample t's mask never depends on how later work is scheduled.
    Exhaustive mode maps subset integer t to its bit pattern, unit i = bit i.
    """
    if config.mode == "exhaustive":
        if unit_count > EXHAUSTIVE_UNIT_LIMIT:
            raise ValueError(
                f"exhaustive mode enumerates 2^K subsets; K={unit_count} exceeds "
                f"the limit of {EXHAUSTIVE_UNIT_LIMIT}"
            )
        t = np.arange(2**unit_count, dtype=np.uint32)
        return (t[:, None] >> np.arange(unit_count)[None, :]) & 1 != 0
    rng = np.random.default_rng(config.seed)
    return rng.random((config.sample_count, unit_count)) < config.inclusion_prob


def _score_rows(
    data: np.ndarray,
    labels: np.ndarray,
    kept_rows: np.ndarray,
    classifier: Classifier,
    target_class: int,
) -> list[float]:
    """Score one batch of keep-rows. Shared verbatim by the serial path and
    the worker processes; identical inputs must produce identical bits."""
    images = []
    for row in kept_rows:
        mask = row[labels]
        images.append(GrayImage._wrap(np.where(mask, data, 0.0)))
    scores = classifier.classify_batch(images)
    return [s.values[target_class] for s in scores]


_WORKER_STATE: tuple | None = None


def _init_worker(data, labels, classifier, target_class) -> None:
    global _WORKER_STATE
    _WORKER_STATE = (data, labels, classifier, target_class)


def _worker_score(kept_rows: np.ndarray) -> list[float]:
    assert _WORKER_STATE is not None
    data, labels, classifier, target_class = _WORKER_STATE
    return _score_rows(data, labels, kept_rows, classifier, target_class)


def _collect_scores(
    image: GrayImage,
    labeling: SuperpixelLabeling,
    kept: np.ndarray,
    classifier: Classifier,
    target_class: int,
    batch_size: int,
    workers: int,
) -> np.ndarray:
    """All T scores in sample order, optionally fanned out across processes."""
    data = image.data
    labels = labeling.labels
    total = kept.shape[0]
    chunks = [kept[i : i + batch_size] for i in range(0, total, batch_size)]

    parallel = workers > 1 and getattr(classifier, "parallel_safe", False)
    if workers > 1 and not parallel:
        log.info("classifier is not forkable; scoring on the main process")

    scores: list[float] = []
    if parallel:
        ctx = get_context("fork")
        with ProcessPoolExecutor(
            max_workers=workers,
            mp_context=ctx,
            initializer=_init_worker,
            initargs=(data, labels, classifier, target_class),
        ) as pool:
            for batch in pool.map(_worker_score, chunks):
                scores.extend(batch)
    else:
        for start, chunk in zip(range(0, total, batch_size), chunks):
            try:
                scores.extend(_score_rows(data, labels, chunk, classifier, target_class))
            except ClassifierError as e:
                raise ClassifierError(
                    f"while scoring samples {start}..{start + len(chunk) - 1}: {e}",
                    request_id=e.request_id,
                ) from e
    return np.array(scores, dtype=np.float64)


def attribute(
    image: GrayImage,
    classifier: Classifier,
    config: SamplingConfig,
    labeling: SuperpixelLabeling | None = None,
    workers: int = 1,
) -> AttributionMap:
    """Sample-mean occlusion attribution for ``config.target_class``.

    Pass ``labeling`` to pin the unit partition (tests and oracles do);
    otherwise it is derived from the config. ``workers`` > 1 fans the
    classifier calls out over processes when the classifier allows it;
    the result is bit-identical either way.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    info = classifier.handshake()
    if config.target_class >= info.class_count:
        raise ValueError(
            f"target_class {config.target_class} out of range for "
            f"{info.class_count} classes"
        )
    if labeling is None:
        labeling = units_for(image, config)
    elif labeling.shape != image.shape:
        raise ValueError(
            f"labeling shape {labeling.shape} does not match image {image.shape}"
        )

    kept = _keep_matrix(config, labeling.region_count)
    scores = _collect_scores(
        image, labeling, kept, classifier, config.target_class,
        config.batch_size, workers,
    )

    # Sum scores per unit in sample order, then broadcast through the label
    # map. Per-pixel this adds the same float sequence a pixelwise loop would
    # (absent samples contribute an exact 0), so the result is bit-identical
    # to the direct mean of score-weighted masks.
    t = kept.shape[0]
    acc = np.zeros(labeling.region_count, dtype=np.float64)
    for i in range(t):
        acc[kept[i]] += scores[i]
    per_unit = acc / float(t)
    return AttributionMap._wrap(np.ascontiguousarray(per_unit[labeling.labels]))


def iter_mask_samples(
    image: GrayImage,
    classifier: Classifier,
    config: SamplingConfig,
    labeling: SuperpixelLabeling | None = None,
) -> Iterator[MaskSample]:
    """The individual (mask, score) draws behind attribute(), in sample order."""
    info = classifier.handshake()
    if config.target_class >= info.class_count:
        raise ValueError(
            f"target_class {config.target_class} out of range for "
            f"{info.class_count} classes"
        )
    if labeling is None:
        labeling = units_for(image, config)
    kept = _keep_matrix(config, labeling.region_count)
    for start in range(0, kept.shape[0], config.batch_size):
        chunk = kept[start : start + config.batch_size]
        batch = _score_rows(
            image.data, labeling.labels, chunk, classifier, config.target_class
        )
        for row, score in zip(chunk, batch):
            yield MaskSample(BinaryMask._wrap(row[labeling.labels]), score)


def normalize_minmax(amap: AttributionMap) -> AttributionMap:
    """Rescale to [0, 1]; a constant map becomes all zeros by convention."""
    lo = float(amap.values.min())
    hi = float(amap.values.max())
    if hi == lo:
        return AttributionMap._wrap(np.zeros(amap.shape))
    return AttributionMap._wrap((amap.values - lo) / (hi - lo))


def monte_carlo_stderr(samples: Sequence[MaskSample], pixel: tuple[int, int]) -> float:
    """Standard error of the attribution estimate at one (y, x) pixel."""
    y, x = pixel
    z = np.array(
        [s.score if s.mask.bits[y, x] else 0.0 for s in samples], dtype=np.float64
    )
    if len(z) < 2:
        return 0.0
    return float(np.std(z, ddof=1) / math.sqrt(len(z)))


def save_attribution(amap: AttributionMap, path: str | Path) -> None:
    """Binary dump: 16-byte header (magic, width, height, 4 reserved bytes),
    then row-major little-endian float32 values. Lossy beyond float32."""
    header = ATTR_MAGIC + struct.pack("<II", amap.width, amap.height) + b"\x00" * 4
    Path(path).write_bytes(header + amap.values.astype("<f4").tobytes(order="C"))


def load_attribution(path: str | Path) -> AttributionMap:
    """Read the binary format written by save_attribution."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise DataError(f"attribution file not found: {path}") from e
    if len(raw) < 16 or raw[:4] != ATTR_MAGIC:
        raise DataError(f"{path} is not an attribution dump (bad header)")
    width, height = struct.unpack("<II", raw[4:12])
    expected = 16 + 4 * width * height
    if width < 1 or height < 1 or len(raw) != expected:
        raise DataError(
            f"{path} header says {width}x{height} but file has {len(raw)} bytes"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return AttributionMap(values.reshape(height, width))


def save_attribution_png(amap: AttributionMap, path: str | Path) -> None:
    """8-bit grayscale PNG of the min-max-normalized map."""
    save_image(GrayImage._wrap(normalize_minmax(amap).values), path)
