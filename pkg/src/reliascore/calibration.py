"""Expected calibration error with adaptive equal-count binning.

Samples are sorted by score and cut into B contiguous bins of near-equal
size. B is chosen automatically: the largest bin count whose per-bin
accuracies come out non-decreasing (B = 1 always qualifies, so the search
terminates). The reported error is the size-weighted mean gap between each
bin's average score and its accuracy.

All arithmetic here is plain Python floats with left-to-right accumulation.
That is a contract, not an accident: brute_force_binning_oracle re-derives
the same quantity with independent control flow, and tests require the two
to agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ScoredOutcome:
    """One sample for calibration: a confidence-like score and whether the
    prediction was right."""

    score: float
    correct: bool

    def __post_init__(self):
        if not math.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class CalibrationResult:
    """Chosen binning and the error it yields.

    Bins are reported in score order. fixed_bin_ece results may have
    non-monotone accuracies; adaptive results never do.
    """

    bin_count: int
    bin_sizes: tuple[int, ...]
    bin_scores: tuple[float, ...]
    bin_accuracies: tuple[float, ...]
    ece: float

    def __post_init__(self):
        if self.bin_count < 1 or len(self.bin_sizes) != self.bin_count:
            raise ValueError("bin_count must match the per-bin tuples")
        if len(self.bin_scores) != self.bin_count or len(self.bin_accuracies) != self.bin_count:
            raise ValueError("per-bin tuples must all have bin_count entries")
        if any(s < 1 for s in self.bin_sizes):
            raise ValueError("every bin must hold at least one sample")
        for v in (*self.bin_scores, *self.bin_accuracies, self.ece):
            if not math.isfinite(v) or not (0.0 <= v <= 1.0):
                raise ValueError(f"value {v} outside [0, 1]")

    def boundaries(self) -> tuple[int, ...]:
        """Cumulative cut points into the score-sorted sample list: starts at
        0, ends at N, one entry per bin edge."""
        edges = [0]
        for s in self.bin_sizes:
            edges.append(edges[-1] + s)
        return tuple(edges)

    def to_json_dict(self) -> dict:
        return {
            "bin_count": self.bin_count,
            "boundaries": list(self.boundaries()),
            "bin_sizes": list(self.bin_sizes),
            "bin_scores": list(self.bin_scores),
            "bin_accuracies": list(self.bin_accuracies),
            "ece": self.ece,
        }


def _sorted_by_score(outcomes: Sequence[ScoredOutcome]) -> list[ScoredOutcome]:
    # Stable: equal scores keep their input order, which pins tie behaviour.
    idx = sorted(range(len(outcomes)), key=lambda i: outcomes[i].score)
    return [outcomes[i] for i in idx]


def _near_equal_sizes(n: int, b: int) -> list[int]:
    # The first n mod b bins take the extra sample.
    base, rem = divmod(n, b)
    return [base + 1] * rem + [base] * (b - rem)


def _accuracies_if_monotone(ordered: list[ScoredOutcome], sizes: list[int]) -> list[float] | None:
    accs: list[float] = []
    start = 0
    for size in sizes:
        hits = 0
        for o in ordered[start : start + size]:
            if o.correct:
                hits += 1
        acc = hits / size
        if accs and acc < accs[-1]:
            return None
        accs.append(acc)
        start += size
    return accs


def _evaluate(ordered: list[ScoredOutcome], sizes: list[int]) -> CalibrationResult:
    n = len(ordered)
    bin_scores: list[float] = []
    bin_accs: list[float] = []
    err = 0.0
    start = 0
    for size in sizes:
        total = 0.0
        hits = 0
        for o in ordered[start : start + size]:
            total += o.score
            if o.correct:
                hits += 1
        f = total / size
        acc = hits / size
        bin_scores.append(f)
        bin_accs.append(acc)
        err += abs(f - acc) * size
        start += size
    return CalibrationResult(
        bin_count=len(sizes),
        bin_sizes=tuple(sizes),
        bin_scores=tuple(bin_scores),
        bin_accuracies=tuple(bin_accs),
        ece=err / n,
    )


def adaptive_ece(outcomes: Sequence[ScoredOutcome]) -> CalibrationResult:
    """Calibration error at the finest admissible equal-count binning.

    Scans B from N down and stops at the first bin count whose accuracies
    are non-decreasing in score order.
    """
    n = len(outcomes)
    if n < 2:
        raise ValueError(f"need at least 2 outcomes, got {n}")
    ordered = _sorted_by_score(outcomes)
    for b in range(n, 0, -1):
        sizes = _near_equal_sizes(n, b)
        if _accuracies_if_monotone(ordered, sizes) is not None:
            return _evaluate(ordered, sizes)
    raise AssertionError("unreachable: a single bin is always admissible")


def fixed_bin_ece(outcomes: Sequence[ScoredOutcome], bins: int) -> CalibrationResult:
    """Calibration error at a caller-chosen bin count, no monotonicity rule."""
    n = len(outcomes)
    if n < 2:
        raise ValueError(f"need at least 2 outcomes, got {n}")
    if not (1 <= bins <= n):
        raise ValueError(f"bins must be in [1, {n}], got {bins}")
    return _evaluate(_sorted_by_score(outcomes), _near_equal_sizes(n, bins))


def brute_force_binning_oracle(outcomes: Sequence[ScoredOutcome]) -> CalibrationResult:
    """Same answer as adaptive_ece, derived the slow way.

    Checks every candidate bin count, collects all admissible ones, and
    evaluates the largest. Deliberately re-implemented end to end; folding
    this into adaptive_ece would defeat its purpose as a cross-check.
    """
    n = len(outcomes)
    if n < 2:
        raise ValueError(f"need at least 2 outcomes, got {n}")
    order = sorted(range(n), key=lambda i: outcomes[i].score)
    scores = [outcomes[i].score for i in order]
    hits = [1 if outcomes[i].correct else 0 for i in order]

    admissible: list[int] = []
    for b in range(1, n + 1):
        base, rem = divmod(n, b)
        prev_acc = None
        start = 0
        ok = True
        for k in range(b):
            size = base + 1 if k < rem else base
            got = 0
            for h in hits[start : start + size]:
                got += h
            acc = got / size
            if prev_acc is not None and acc < prev_acc:
                ok = False
                break
            prev_acc = acc
            start += size
        if ok:
            admissible.append(b)

    best = max(admissible)
    base, rem = divmod(n, best)
    sizes = [base + 1 if k < rem else base for k in range(best)]
    bin_scores: list[float] = []
    bin_accs: list[float] = []
    err = 0.0
    start = 0
    for size in sizes:
        total = 0.0
        got = 0
        for i in range(start, start + size):
            total += scores[i]
            got += hits[i]
        f = total / size
        acc = got / size
        bin_scores.append(f)
        bin_accs.append(acc)
        err += abs(f - acc) * size
        start += size
    return CalibrationResult(
        bin_count=best,
        bin_sizes=tuple(sizes),
        bin_scores=tuple(bin_scores),
        bin_accuracies=tuple(bin_accs),
        ece=err / n,
    )
