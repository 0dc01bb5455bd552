"""Hierarchical histogram matching (HHM) for intensity normalization.

Two matching passes are applied to an image pair. The first maps the
baseline onto the follow-up's histogram. The second maps the follow-up onto
the histogram of the already-normalized baseline.
"""

from __future__ import annotations

import numpy as np

from .imgcore import N_LEVELS, as_image, check_same_shape, histogram


def matching_lut(source_hist, reference_hist) -> np.ndarray:
    """CDF-matching lookup table between two 256-bin histograms.

    ``lut[v]`` is the smallest ``w`` with ``CDF_ref(w) >= CDF_src(v)``. The
    comparison is done on integer cross-products so that equal CDF levels
    are never split by rounding.
    """
    src = np.asarray(source_hist, dtype=np.int64)
    ref = np.asarray(reference_hist, dtype=np.int64)
    if src.shape != (N_LEVELS,) or ref.shape != (N_LEVELS,):
        raise ValueError("histograms must have 256 bins")
    if (src < 0).any() or (ref < 0).any():
        raise ValueError("histogram counts must be non-negative")
    n_src, n_ref = int(src.sum()), int(ref.sum())
    if n_ref == 0:
        raise ValueError("reference histogram is empty")
    if n_src == 0:
        return np.arange(N_LEVELS, dtype=np.uint8)
    # CDF_ref(w) >= CDF_src(v)  <=>  cum_ref[w] * n_src >= cum_src[v] * n_ref
    cum_ref = np.cumsum(ref) * n_src
    cum_src = np.cumsum(src) * n_ref
    lut = np.searchsorted(cum_ref, cum_src, side="left")
    return np.minimum(lut, N_LEVELS - 1).astype(np.uint8)


def match_histogram(source, reference_hist, exclude_zero: bool = False):
    """Remap ``source`` so its histogram approximates ``reference_hist``.

    Returns ``(matched_image, lut)``. With ``exclude_zero`` the background
    level 0 is left out of both histograms and always maps to itself.
    """
    src = as_image(source)
    src_hist = histogram(src)
    ref_hist = np.array(reference_hist, dtype=np.int64, copy=True)
    if exclude_zero:
        src_hist[0] = 0
        ref_hist[0] = 0
    if ref_hist.sum() == 0:
        raise ValueError("reference histogram is empty")
    lut = matching_lut(src_hist, ref_hist)
    if exclude_zero:
        lut[0] = 0
        lut[1:] = np.maximum(lut[1:], 1)
    return lut[src], lut


def hhm_normalize(i1, i2, exclude_zero: bool = False, passes: int = 2):
    """Normalize an image pair by hierarchical histogram matching.

    Pass 1 matches ``i1`` to the histogram of ``i2``; pass 2 matches ``i2``
    to the histogram of the pass-1 result. Extra ``passes`` keep alternating
    between the two images.

    Returns:
        (i1_normalized, i2_normalized)
    """
    a = as_image(i1)
    b = as_image(i2)
    check_same_shape(a, b)
    if passes < 2:
        raise ValueError("passes must be >= 2")
    for k in range(passes):
        if k % 2 == 0:
            a, _ = match_histogram(a, histogram(b), exclude_zero)
        else:
            b, _ = match_histogram(b, histogram(a), exclude_zero)
    return a, b


def cdf_l1_distance(hist_a, hist_b) -> float:
    """Sum of absolute differences between two normalized CDFs."""
    ca = np.cumsum(hist_a) / np.sum(hist_a)
    cb = np.cumsum(hist_b) / np.sum(hist_b)
    return float(np.abs(ca - cb).sum())
