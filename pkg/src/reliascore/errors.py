"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(Exception):
    """Bad configuration: unparseable config file, invalid flag combination."""


class DataError(Exception):
    """Bad input data: missing or undecodable image/mask/manifest files."""


class ClassifierError(Exception):
    """The classifier became unavailable or violated its contract.

    ``request_id`` identifies the offending wire request when one exists.
    """

    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(message)
        self.request_id = request_id


class EvaluationError(Exception):
    """A pipeline stage failed while scoring one sample."""

    def __init__(self, stage: str, sample_id: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed for sample '{sample_id}': {cause}")
        self.stage = stage
        self.sample_id = sample_id
        self.cause = cause
