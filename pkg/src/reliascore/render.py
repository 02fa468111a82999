"""Visualization helpers: heat colormap, attribution overlays, region borders."""

from __future__ import annotations

import numpy as np

from .attribution import AttributionMap
from .images import GrayImage, RgbImage
from .superpixels import SuperpixelLabeling

# Piecewise-linear heat scale: low = navy, middle = green, high = red.
_ANCHORS = np.array([0.0, 0.5, 1.0])
_RED = np.array([0.0, 0.0, 255.0])
_GREEN = np.array([0.0, 255.0, 0.0])
_BLUE = np.array([128.0, 0.0, 0.0])


def heat_colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to float RGB in [0, 255], channelwise linear."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and (float(v.min()) < 0.0 or float(v.max()) > 1.0):
        raise ValueError("colormap input must lie in [0, 1]")
    return np.stack(
        [
            np.interp(v, _ANCHORS, _RED),
            np.interp(v, _ANCHORS, _GREEN),
            np.interp(v, _ANCHORS, _BLUE),
        ],
        axis=-1,
    )


def render_overlay(image: GrayImage, normalized: AttributionMap, alpha: float = 0.5) -> RgbImage:
    """Blend the grayscale image with the colormapped attribution.

    Per pixel and channel: (1 - alpha) * gray_255 + alpha * heat(value),
    rounded to the nearest integer at the very end. ``normalized`` must
    already be min-max normalized (values in [0, 1]).
    """
    if image.shape != normalized.shape:
        raise ValueError(
            f"image shape {image.shape} does not match attribution {normalized.shape}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if float(normalized.values.max()) > 1.0:
        raise ValueError("attribution must be min-max normalized before rendering")
    gray = image.data * 255.0
    blend = (1.0 - alpha) * gray[:, :, None] + alpha * heat_colormap(normalized.values)
    return RgbImage(np.rint(blend).astype(np.uint8))


def region_boundaries(labeling: SuperpixelLabeling) -> np.ndarray:
    """Boolean map of pixels that touch a different region to the right/below."""
    labels = labeling.labels
    edge = np.zeros(labels.shape, dtype=bool)
    horiz = labels[:, :-1] != labels[:, 1:]
    vert = labels[:-1, :] != labels[1:, :]
    edge[:, :-1] |= horiz
    edge[:, 1:] |= horiz
    edge[:-1, :] |= vert
    edge[1:, :] |= vert
    return edge


def boundary_overlay(
    image: GrayImage,
    labeling: SuperpixelLabeling,
    color: tuple[int, int, int] = (255, 255, 0),
) -> RgbImage:
    """Paint region borders in a solid color on top of the grayscale image."""
    if image.shape != labeling.shape:
        raise ValueError(
            f"image shape {image.shape} does not match labeling {labeling.shape}"
        )
    gray = np.rint(image.data * 255.0).astype(np.uint8)
    out = np.repeat(gray[:, :, None], 3, axis=2)
    out[region_boundaries(labeling)] = np.array(color, dtype=np.uint8)
    return RgbImage(out)
