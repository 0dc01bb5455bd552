"""Per-pixel change features over small square windows.

Three features are provided:

* ``glrt``: the Gaussian-mean likelihood ratio statistic
  ``sqrt(n) / (2 sigma) * |mean_b - mean_a|``.
* ``lmi``: local mutual information of the window pair, with pairs whose
  intensities differ by at most ``delta_thresh`` counted as unchanged.
* ``wlmi``: the weighted per-pixel variant. The center weight shrinks with
  the number of changed pixels and the center intensity change. Neighbor
  weights fall off with Chebyshev distance.

For ``lmi`` and ``wlmi`` the map stores a similarity percentage (SimRate):
the feature of (A, B) relative to the feature of (A, A). Low values mean
change. For ``glrt`` the map stores the statistic, where high means change.

All window quantities are computed in batch. For every window, each pixel
counts how many window pixels share its A value, its B value and its
(A, B) pair. This avoids building 256 x 256 joint tables per pixel.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .eroc import Roi
from .imgcore import as_image, check_same_shape

Method = Literal["glrt", "lmi", "wlmi"]
METHODS = ("glrt", "lmi", "wlmi")

DEFAULT_WINDOW = 3
DEFAULT_DELTA = 4
DENOM_EPS = 1e-12


@dataclass(frozen=True)
class GlrtConfig:
    sigma: float
    gamma: float = 0.0
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("GLRT needs sigma > 0")
        _check_window(self.window)


@dataclass
class SimilarityMap:
    """Feature values over a Roi.

    ``values`` has the full frame shape and is NaN outside ``roi``.
    """

    roi: Roi
    values: np.ndarray
    method: str

    @property
    def higher_is_change(self) -> bool:
        return self.method == "glrt"

    def inside(self) -> np.ndarray:
        return self.values[self.roi.slices]

    def change_score(self) -> np.ndarray:
        """Full-frame score oriented so that larger means more change."""
        return self.values if self.higher_is_change else 100.0 - self.values


def _check_window(size: int) -> None:
    if size < 3 or size % 2 == 0:
        raise ValueError(f"window size must be odd and >= 3, got {size}")


def window_pair(a, b, i: int, j: int, size: int = DEFAULT_WINDOW):
    """Return the ``size x size`` windows of ``a`` and ``b`` centered at (i, j).

    Positions outside the frame are filled by edge replication.
    """
    _check_window(size)
    a = as_image(a)
    b = as_image(b)
    check_same_shape(a, b)
    r = size // 2
    rows = np.clip(np.arange(i - r, i + r + 1), 0, a.shape[0] - 1)
    cols = np.clip(np.arange(j - r, j + r + 1), 0, a.shape[1] - 1)
    return a[np.ix_(rows, cols)], b[np.ix_(rows, cols)]


def chebyshev_weights(size: int) -> np.ndarray:
    """Neighbor weights ``1 / max(|drow|, |dcol|)``; the center entry is left at 0."""
    r = size // 2
    d = np.maximum(*np.abs(np.mgrid[-r:r + 1, -r:r + 1]))
    w = np.zeros((size, size))
    w[d > 0] = 1.0 / d[d > 0]
    return w


# ---------------------------------------------------------------------------
# Batched window algebra.  X, Y are (K, n) integer arrays, one row per window.
# ---------------------------------------------------------------------------

def _merge_close(x: np.ndarray, y: np.ndarray, delta: int) -> np.ndarray:
    """Replace ``y`` by ``x`` wherever the pair counts as unchanged."""
    return np.where(np.abs(x - y) <= delta, x, y)


def _pair_counts(x: np.ndarray, y: np.ndarray):
    """Per-pixel occurrence counts of its A value, B value and (A, B) pair."""
    eq_x = x[:, :, None] == x[:, None, :]
    eq_y = y[:, :, None] == y[:, None, :]
    cx = eq_x.sum(axis=2)
    cy = eq_y.sum(axis=2)
    cxy = (eq_x & eq_y).sum(axis=2)
    return cx, cy, cxy


def _row_sum(v: np.ndarray) -> np.ndarray:
    """Sum along axis 1 in a fixed left-to-right order.

    ``ndarray.sum`` picks its pairing from memory alignment, so equal rows in
    different buffers can differ in the last bit. Self-similarity must come
    out exactly 100, which needs bit-identical numerator and denominator.
    """
    acc = np.zeros(v.shape[0])
    for k in range(v.shape[1]):
        acc += v[:, k]
    return acc


def _pixel_info(cx, cy, cxy, n: int) -> np.ndarray:
    """``log2(p(i) / (p(x) p(y)))`` for every window pixel."""
    return np.log2(n * cxy / (cx * cy))


def _batch_lmi(x, y, delta):
    n = x.shape[1]
    y = _merge_close(x, y, delta)
    cx, cy, cxy = _pair_counts(x, y)
    # Summing over pixels visits pair i exactly M_i times, so a 1/M weight per
    # pixel reproduces the sum over distinct pairs of (M_i / M) log(...).
    return _row_sum(_pixel_info(cx, cy, cxy, n)) / n


def _batch_entropy(x):
    n = x.shape[1]
    cx = (x[:, :, None] == x[:, None, :]).sum(axis=2)
    return _row_sum(np.log2(n / cx)) / n


def _batch_wlmi_weights(x, y, delta, size):
    """Per-pixel weights for the (A, B) numerator; shape (K, n)."""
    n = x.shape[1]
    c = n // 2
    changed = np.abs(x - y) > delta
    n_change = np.maximum(changed.sum(axis=1), 1)
    center_delta = np.abs(x[:, c] - _merge_close(x, y, delta)[:, c])
    beta = np.broadcast_to(chebyshev_weights(size).ravel(), x.shape).copy()
    beta[:, c] = 2.0 / (n_change * np.exp(center_delta / 255.0))
    return beta


def _batch_wlmi(x, y, delta, size, beta=None):
    n = x.shape[1]
    if beta is None:
        beta = _batch_wlmi_weights(x, y, delta, size)
    y = _merge_close(x, y, delta)
    cx, cy, cxy = _pair_counts(x, y)
    terms = (cxy / n) * _pixel_info(cx, cy, cxy, n)
    return _row_sum(beta * terms)


def _batch_sim_rate(x, y, method, delta, size):
    if method == "lmi":
        num = _batch_lmi(x, y, delta)
        den = _batch_entropy(x)
    elif method == "wlmi":
        num = _batch_wlmi(x, y, delta, size)
        den = _batch_wlmi(x, x, delta, size)
    else:
        raise ValueError(f"unknown similarity method {method!r}")
    out = np.empty(x.shape[0])
    # With every pair within delta the merged window pair is (A, A) itself, so
    # the ratio is exactly 100; setting it directly avoids last-bit noise from
    # vectorized log2.
    same = (np.abs(x - y) <= delta).all(axis=1)
    degenerate = den <= DENOM_EPS
    ok = ~degenerate & ~same
    out[ok] = np.clip(100.0 * num[ok] / den[ok], 0.0, 100.0)
    out[same] = 100.0
    out[degenerate & ~same] = 0.0
    return out


def _batch_glrt(x, y, sigma):
    n = x.shape[1]
    return math.sqrt(n) / (2.0 * sigma) * np.abs(y.mean(axis=1) - x.mean(axis=1))


def _flat(wa, wb):
    wa = np.asarray(wa)
    wb = np.asarray(wb)
    if wa.shape != wb.shape or wa.ndim != 2 or wa.shape[0] != wa.shape[1]:
        raise ValueError("windows must be equal square arrays")
    _check_window(wa.shape[0])
    return (wa.astype(np.int64).reshape(1, -1), wb.astype(np.int64).reshape(1, -1),
            wa.shape[0])


# ---------------------------------------------------------------------------
# Scalar API
# ---------------------------------------------------------------------------

def joint_histogram(wa, wb, delta_thresh: int = DEFAULT_DELTA) -> Counter:
    """Counts of intensity pairs ``(x, y)`` in a window pair.

    Pairs with ``|x - y| <= delta_thresh`` are recorded as ``(x, x)``.
    """
    x, y, _ = _flat(wa, wb)
    y = _merge_close(x, y, delta_thresh)
    return Counter(zip(x[0].tolist(), y[0].tolist()))


def lmi(wa, wb, delta_thresh: int = DEFAULT_DELTA) -> float:
    """Local mutual information of a window pair, in bits."""
    x, y, _ = _flat(wa, wb)
    return float(_batch_lmi(x, y, delta_thresh)[0])


def window_entropy(w) -> float:
    """Shannon entropy (bits) of the intensities in a window."""
    x, _, _ = _flat(w, w)
    return float(_batch_entropy(x)[0])


def wlmi_weights(wa, wb, delta_thresh: int = DEFAULT_DELTA) -> np.ndarray:
    x, y, size = _flat(wa, wb)
    return _batch_wlmi_weights(x, y, delta_thresh, size)[0].reshape(size, size)


def wlmi(wa, wb, delta_thresh: int = DEFAULT_DELTA) -> float:
    """Weighted local mutual information of a window pair.

    Each pixel ``v`` contributes ``beta_v * (M_i / M) * log2(p(i) / (p(x) p(y)))``
    where ``i`` is its intensity pair.
    """
    x, y, size = _flat(wa, wb)
    return float(_batch_wlmi(x, y, delta_thresh, size)[0])


def sim_rate_from_values(numerator: float, denominator: float) -> float:
    """Similarity percentage ``100 * numerator / denominator`` clamped to [0, 100]."""
    if denominator <= DENOM_EPS:
        raise ValueError("denominator must be positive")
    return float(min(max(100.0 * numerator / denominator, 0.0), 100.0))


def sim_rate(wa, wb, method: Method = "wlmi", delta_thresh: int = DEFAULT_DELTA) -> float:
    """Similarity percentage of window B against window A.

    When window A is constant the ratio is undefined; the result is then 100
    if every pair is within ``delta_thresh`` and 0 otherwise.
    """
    x, y, size = _flat(wa, wb)
    return float(_batch_sim_rate(x, y, method, delta_thresh, size)[0])


def is_change(rate: float, grow_threshold: float = 50.0) -> bool:
    return rate < grow_threshold


def glrt_statistic(wa, wb, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("GLRT needs sigma > 0")
    x, y, _ = _flat(wa, wb)
    return float(_batch_glrt(x, y, sigma)[0])


def glrt_decide(wa, wb, cfg: GlrtConfig) -> bool:
    """True when the no-change hypothesis is rejected (``l >= gamma``)."""
    return glrt_statistic(wa, wb, cfg.sigma) >= cfg.gamma


def estimate_noise_sigma(diff) -> float:
    """Per-image noise std estimated from a difference image.

    The difference of two images with independent noise of std ``s`` has
    variance ``2 s^2``, hence the division by sqrt(2).
    """
    d = np.asarray(diff, dtype=np.float64)
    if d.size == 0:
        raise ValueError("difference image is empty")
    return float(d.std() / math.sqrt(2.0))


def glrt_gamma(fpr: float = 0.05) -> float:
    """Closed-form threshold giving the requested per-pixel false alarm rate.

    Under no change with Gaussian noise, ``mean_b - mean_a`` is normal with
    variance ``2 sigma^2 / n``, so the statistic is ``|Z| / sqrt(2)`` for a
    standard normal ``Z`` regardless of ``n`` and ``sigma``.
    """
    from scipy.stats import norm

    if not 0 < fpr < 1:
        raise ValueError("fpr must be in (0, 1)")
    return float(norm.ppf(1.0 - fpr / 2.0) / math.sqrt(2.0))


def calibrate_glrt_gamma(sigma: float, window: int = DEFAULT_WINDOW, fpr: float = 0.05,
                         trials: int = 20000, rng=None, base: float = 128.0) -> float:
    """Monte-Carlo threshold: the (1 - fpr) quantile of the statistic on noise-only pairs."""
    rng = np.random.default_rng(rng)
    n = window * window
    wa = base + rng.normal(0.0, sigma, size=(trials, n))
    wb = base + rng.normal(0.0, sigma, size=(trials, n))
    stats = _batch_glrt(wa, wb, sigma)
    return float(np.quantile(stats, 1.0 - fpr))


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

def _roi_windows(img: np.ndarray, roi: Roi, size: int, row_lo: int, row_hi: int):
    r = size // 2
    sub = img[max(row_lo - r, 0):row_hi + r + 1]
    # Replicate edges only where the frame really ends.
    pad_top = r - (row_lo - max(row_lo - r, 0))
    pad_bot = r - (min(row_hi + r, img.shape[0] - 1) - row_hi)
    sub = np.pad(sub, ((pad_top, pad_bot), (r, r)), mode="edge")
    win = sliding_window_view(sub, (size, size))[:, roi.left:roi.right + 1]
    return win.reshape(-1, size * size).astype(np.int64)


def sim_rate_map(a, b, roi: Optional[Roi] = None, method: Method = "wlmi",
                 window: int = DEFAULT_WINDOW, delta_thresh: int = DEFAULT_DELTA,
                 sigma: Optional[float] = None, tile_rows: int = 32,
                 jobs: int = 1) -> SimilarityMap:
    """Evaluate a feature at every pixel of ``roi``.

    The Roi is split into bands of ``tile_rows`` rows that may be evaluated
    concurrently with ``jobs`` threads. Values do not depend on the tiling.
    For ``method="glrt"`` a positive ``sigma`` is required.
    """
    a = as_image(a)
    b = as_image(b)
    check_same_shape(a, b)
    _check_window(window)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if roi is None:
        roi = Roi.full(a.shape)
    values = np.full(a.shape, np.nan)
    if roi.empty:
        return SimilarityMap(roi, values, method)
    if method == "glrt" and not (sigma and sigma > 0):
        raise ValueError("GLRT map needs sigma > 0")
    if tile_rows < 1:
        raise ValueError("tile_rows must be >= 1")

    def run(band):
        lo, hi = band
        x = _roi_windows(a, roi, window, lo, hi)
        y = _roi_windows(b, roi, window, lo, hi)
        if method == "glrt":
            out = _batch_glrt(x, y, sigma)
        else:
            out = _batch_sim_rate(x, y, method, delta_thresh, window)
        return band, out.reshape(hi - lo + 1, roi.width)

    bands = [(lo, min(lo + tile_rows - 1, roi.bottom))
             for lo in range(roi.top, roi.bottom + 1, tile_rows)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, bands))
    else:
        results = [run(band) for band in bands]
    for (lo, hi), block in results:
        values[lo:hi + 1, roi.left:roi.right + 1] = block
    return SimilarityMap(roi, values, method)
