"""Evaluation pipeline over logged frames: vessel segmentation as an
ellipse, eccentricity, lateral tracking error, and task timing.

The vessel cross-section is segmented by thresholding dark pixels, keeping
the largest connected component, and fitting an ellipse from second-order
image moments; its eccentricity serves as a proxy for applied probe force.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_MIN_COMPONENT_PX = 30
SIGMA_FACTOR = 3.0


class InvalidFit(ValueError):
    pass


class NoValidFrames(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class EllipseFit:
    """Moment-fitted ellipse; a <= b so e = sqrt(1 - a^2/b^2) stays real."""

    centroid: tuple[float, float] = (0.0, 0.0)   # (col, row) px
    a: float = 0.0
    b: float = 0.0
    orientation: float = 0.0                     # rad, axis of b vs. +col
    valid: bool = False


@dataclass(frozen=True)
class SubtaskSpan:
    subtask_id: int        # 1..5
    start_s: float
    end_s: float

    def __post_init__(self):
        if not 1 <= self.subtask_id <= 5:
            raise ValueError("subtask ids are 1..5")
        if self.end_s < self.start_s:
            raise ValueError("subtask ends before it starts")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class TaskTimeline:
    spans: tuple[SubtaskSpan, ...]

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))
        prev_end = -math.inf
        for span in self.spans:
            if span.start_s < prev_end:
                raise ValueError("subtask spans overlap or are unordered")
            prev_end = span.end_s

    def durations(self) -> dict[int, float]:
        return {s.subtask_id: s.duration_s for s in self.spans}

    @property
    def total_s(self) -> float:
        if not self.spans:
            return 0.0
        return self.spans[-1].end_s - self.spans[0].start_s


def default_threshold(background_mean: float, speckle_sigma: float) -> float:
    """Dark-pixel cutoff: background mean minus three speckle sigma."""
    return background_mean - SIGMA_FACTOR * speckle_sigma


def segment_vessel(pixels: np.ndarray, intensity_threshold: float,
                   min_component_px: int = DEFAULT_MIN_COMPONENT_PX,
                   exclude_border: bool = True) -> EllipseFit:
    """Threshold dark pixels, keep the largest connected component, and fit
    an ellipse via second-order image moments.

    Components touching the image border are discarded by default: the
    anechoic region outside the tissue is dark too, but a vessel
    cross-section lies in the interior. For a filled ellipse the pixel
    covariance eigenvalues are (a/2)^2 and (b/2)^2, so the semi-axes are
    twice the covariance singular values.
    """
    pixels = np.asarray(pixels, dtype=float)
    mask = pixels < intensity_threshold
    labels, count = ndimage.label(mask)
    if count == 0:
        return EllipseFit()
    sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    if exclude_border:
        edge = np.unique(np.concatenate([
            labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
        sizes[edge[edge > 0] - 1] = 0
    best = int(np.argmax(sizes)) + 1
    if sizes[best - 1] < min_component_px:
        return EllipseFit()
    rows, cols = np.nonzero(labels == best)
    cr, cc = rows.mean(), cols.mean()
    dr, dc = rows - cr, cols - cc
    cov = np.array([[np.mean(dc * dc), np.mean(dc * dr)],
                    [np.mean(dc * dr), np.mean(dr * dr)]])
    w, v = np.linalg.eigh(cov)       # ascending eigenvalues
    a = 2.0 * math.sqrt(max(w[0], 0.0))
    b = 2.0 * math.sqrt(max(w[1], 0.0))
    major = v[:, 1]                  # (dcol, drow) of the long axis
    return EllipseFit(centroid=(float(cc), float(cr)), a=a, b=b,
                      orientation=math.atan2(major[1], major[0]),
                      valid=True)


def eccentricity(fit: EllipseFit) -> float:
    """e = sqrt(1 - a^2/b^2) with a <= b; scale-invariant by construction."""
    if not fit.valid or fit.b <= 0:
        raise InvalidFit("eccentricity needs a valid fit with b > 0")
    ratio = fit.a / fit.b
    return math.sqrt(max(1.0 - ratio * ratio, 0.0))


def lateral_rmse(centroid_x: list[float], target_x: float) -> float:
    """RMSE (px) of the horizontal centroid offset from the target line."""
    xs = np.asarray([x for x in centroid_x if x is not None and
                     np.isfinite(x)], dtype=float)
    if xs.size == 0:
        raise NoValidFrames("no valid centroids to score")
    return float(np.sqrt(np.mean((xs - target_x) ** 2)))


def eccentricity_stats(series: list[float]) -> tuple[float, float]:
    """Sample mean and standard deviation of an eccentricity series."""
    es = np.asarray(series, dtype=float)
    if es.size < 2:
        raise InsufficientSamples("need at least 2 samples")
    return float(np.mean(es)), float(np.std(es, ddof=1))
