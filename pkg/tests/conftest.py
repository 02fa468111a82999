"""Shared fixtures and the acceptance-summary printer.

Acceptance tests record one verdict per criterion into ACCEPTANCE_RESULTS;
the terminal-summary hook prints them as one PASS/FAIL line each so the
verdicts survive pytest's output capture.
"""

from __future__ import annotations

import numpy as np
import pytest

from reliascore.classifiers import ClassifierInfo, ClassScores

# criterion number -> (passed, detail). Filled by tests/test_acceptance.py.
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[k]
        verdict = "PASS" if passed else "FAIL"
        tr.write_line(f"ACCEPTANCE CRITERION {k}: {verdict} - {detail}")


class ScriptedClassifier:
    """Returns a fixed per-call sequence of class votes; for entropy tests."""

    parallel_safe = True

    def __init__(self, votes, class_count=2):
        self.votes = list(votes)
        self.class_count = class_count
        self.calls = 0

    def handshake(self):
        return ClassifierInfo(class_count=self.class_count)

    def classify(self, image):
        vote = self.votes[self.calls % len(self.votes)]
        self.calls += 1
        values = [0.0] * self.class_count
        values[vote] = 1.0
        return ClassScores(tuple(values))

    def classify_batch(self, images):
        return [self.classify(im) for im in images]


@pytest.fixture
def scripted_classifier():
    return ScriptedClassifier


@pytest.fixture
def rng():
    return np.random.default_rng(0)
