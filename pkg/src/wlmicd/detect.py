"""Seed selection, region growing and the end-to-end detection pipeline."""

from __future__ import annotations

import heapq
import itertools
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage as ndi

from . import eroc, features
from .eroc import Roi
from .features import SimilarityMap
from .imgcore import as_image, as_mask, check_same_shape, difference
from .normalize import hhm_normalize


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str, timings: Optional[dict] = None):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = time.perf_counter() - t0


_NEIGHBORS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


@dataclass(frozen=True)
class DetectConfig:
    grow_threshold: float = 50.0
    tumor_dilation_radius: int = 10
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.grow_threshold <= 100:
            raise ValueError("grow_threshold must be in (0, 100]")
        if self.tumor_dilation_radius < 0:
            raise ValueError("tumor_dilation_radius must be >= 0")
        if self.connectivity != 8:
            raise ValueError("only 8-connectivity is supported")


@dataclass(frozen=True)
class Seed:
    row: int
    col: int
    rate: float


def tumor_edge(tumor_mask) -> np.ndarray:
    """Tumor pixels with at least one 8-neighbor outside the tumor."""
    mask = as_mask(tumor_mask)
    inner = ndi.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)
    return mask & ~inner


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= r * r


def seed_search_region(tumor_mask, roi: Roi, radius: int) -> np.ndarray:
    """Pixels within ``radius`` of the tumor edge, restricted to ``roi``."""
    mask = as_mask(tumor_mask)
    edge = tumor_edge(mask)
    if radius > 0:
        region = ndi.binary_dilation(edge, structure=disk(radius))
    else:
        region = edge
    return region & roi.mask(mask.shape)


def select_seeds(simmap: SimilarityMap, tumor_mask, cfg: DetectConfig = DetectConfig(),
                 diff=None) -> list[Seed]:
    """One candidate per row of the search region: its minimum-SimRate pixel.

    Candidates at or above ``cfg.grow_threshold`` are dropped. Ties go to the
    lowest column. ``diff`` is accepted for interface parity and is only
    checked for shape.
    """
    mask = as_mask(tumor_mask, simmap.values.shape)
    if diff is not None:
        check_same_shape(np.asarray(diff), mask)
    if not mask.any():
        raise ValueError("tumor mask is empty")
    region = seed_search_region(mask, simmap.roi, cfg.tumor_dilation_radius)
    region &= ~np.isnan(simmap.values)
    seeds = []
    for i in np.flatnonzero(region.any(axis=1)):
        cols = np.flatnonzero(region[i])
        rates = simmap.values[i, cols]
        k = int(np.argmin(rates))
        if rates[k] < cfg.grow_threshold:
            seeds.append(Seed(int(i), int(cols[k]), float(rates[k])))
    return seeds


def region_grow(simmap: SimilarityMap, seeds, cfg: DetectConfig = DetectConfig()) -> np.ndarray:
    """Grow changed regions from ``seeds`` over the similarity map.

    The worklist is a min-heap keyed on (SimRate, column, insertion order).
    The lowest point is popped and marked changed. Each unvisited 8-neighbor
    inside the Roi whose SimRate is below the threshold is pushed.
    """
    values = simmap.values
    n, m = values.shape
    out = np.zeros((n, m), dtype=bool)
    queued = np.zeros((n, m), dtype=bool)
    counter = itertools.count()
    heap = []
    for s in seeds:
        rate = values[s.row, s.col]
        if not rate < cfg.grow_threshold:
            raise ValueError(f"seed {(s.row, s.col)} has SimRate {rate} >= threshold")
        if not queued[s.row, s.col]:
            queued[s.row, s.col] = True
            heapq.heappush(heap, (rate, s.col, next(counter), s.row))
    while heap:
        _, j, _, i = heapq.heappop(heap)
        out[i, j] = True
        for di, dj in _NEIGHBORS:
            r, c = i + di, j + dj
            if 0 <= r < n and 0 <= c < m and not queued[r, c]:
                rate = values[r, c]
                # NaN (outside the Roi) compares False and is never grown into.
                if rate < cfg.grow_threshold:
                    queued[r, c] = True
                    heapq.heappush(heap, (rate, c, next(counter), r))
    return out


@dataclass
class Detection:
    """Everything produced by one pipeline run."""

    mask: np.ndarray
    roi: Roi
    simmap: SimilarityMap
    seeds: list = field(default_factory=list)
    sigma: Optional[float] = None
    gamma: Optional[float] = None
    timings: dict = field(default_factory=dict)

    @property
    def feature_pixels(self) -> int:
        return self.roi.area


def pre_blur(img, sigma: float) -> np.ndarray:
    """Gaussian smoothing used as a light denoiser ahead of the pipeline."""
    if sigma <= 0:
        return img
    out = ndi.gaussian_filter(img.astype(np.float64), sigma, mode="nearest")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def run_detection(a, b, tumor_mask, cfg: DetectConfig = DetectConfig(),
                  feature: str = "wlmi", *, normalize: bool = True,
                  use_eroc: bool = True, eroc_threshold_scale: float = 1.0,
                  window: int = features.DEFAULT_WINDOW,
                  delta_thresh: int = features.DEFAULT_DELTA,
                  glrt_gamma: Optional[float] = None, glrt_fpr: float = 0.05,
                  exclude_zero: bool = False, blur_sigma: float = 0.0,
                  jobs: int = 1) -> Detection:
    """Normalize, localize, score and decide changes between ``a`` and ``b``.

    For ``lmi``/``wlmi`` the decision is made by seeded region growing. For
    ``glrt`` the statistic is thresholded at ``glrt_gamma`` inside the Roi;
    without an explicit gamma the closed-form threshold for ``glrt_fpr`` is
    used. Failures are re-raised as :class:`StageError`.
    """
    timings = {}
    with stage("input"):
        a = as_image(a)
        b = as_image(b)
        check_same_shape(a, b)
        mask = as_mask(tumor_mask, a.shape)
        if feature not in features.METHODS:
            raise ValueError(f"unknown feature {feature!r}")

    with stage("preprocess", timings):
        a, b = pre_blur(a, blur_sigma), pre_blur(b, blur_sigma)
        if normalize:
            a, b = hhm_normalize(a, b, exclude_zero=exclude_zero)

    with stage("eroc", timings):
        roi = eroc.extract_roi(a, b, eroc_threshold_scale) if use_eroc else Roi.full(a.shape)

    sigma = gamma = None
    with stage("features", timings):
        if feature == "glrt":
            sigma = features.estimate_noise_sigma(difference(a, b))
            gamma = glrt_gamma if glrt_gamma is not None else features.glrt_gamma(glrt_fpr)
            if sigma > 0:
                simmap = features.sim_rate_map(a, b, roi, "glrt", window, sigma=sigma, jobs=jobs)
            else:
                # Identical inputs: the statistic is zero everywhere.
                simmap = SimilarityMap(roi, np.where(roi.mask(a.shape), 0.0, np.nan), "glrt")
        else:
            simmap = features.sim_rate_map(a, b, roi, feature, window, delta_thresh, jobs=jobs)

    seeds = []
    with stage("decide", timings):
        if roi.empty or (feature == "glrt" and sigma <= 0):
            out = np.zeros(a.shape, dtype=bool)
        elif feature == "glrt":
            out = np.nan_to_num(simmap.values, nan=-np.inf) >= gamma
        else:
            seeds = select_seeds(simmap, mask, cfg)
            out = region_grow(simmap, seeds, cfg)
    return Detection(out, roi, simmap, seeds, sigma, gamma, timings)


def detect_changes(a, b, tumor_mask, cfg: DetectConfig = DetectConfig(),
                   feature: str = "wlmi", **kwargs) -> np.ndarray:
    """Change mask between ``a`` and ``b``; see :func:`run_detection`."""
    return run_detection(a, b, tumor_mask, cfg, feature, **kwargs).mask
