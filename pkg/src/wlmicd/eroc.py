"""Extraction of the region of changes (EROC).

Row-wise and column-wise mean squared differences between two registered
images are scanned from each side. The first ascent toward a peak above the
threshold marks that side of the change rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imgcore import as_image, check_same_shape


@dataclass(frozen=True)
class MsdCurves:
    top_down: np.ndarray
    bottom_up: np.ndarray
    left_right: np.ndarray
    right_left: np.ndarray


@dataclass(frozen=True)
class Roi:
    """Inclusive rectangle ``[top, bottom] x [left, right]``; may be empty."""

    top: int = 0
    bottom: int = -1
    left: int = 0
    right: int = -1
    empty: bool = True

    @classmethod
    def full(cls, shape) -> "Roi":
        n, m = shape
        return cls(0, n - 1, 0, m - 1, empty=False)

    @classmethod
    def none(cls) -> "Roi":
        return cls()

    @property
    def height(self) -> int:
        return 0 if self.empty else self.bottom - self.top + 1

    @property
    def width(self) -> int:
        return 0 if self.empty else self.right - self.left + 1

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def slices(self) -> tuple[slice, slice]:
        if self.empty:
            return slice(0, 0), slice(0, 0)
        return slice(self.top, self.bottom + 1), slice(self.left, self.right + 1)

    def mask(self, shape) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.slices] = True
        return out

    def contains(self, other: "Roi") -> bool:
        if other.empty:
            return True
        if self.empty:
            return False
        return (self.top <= other.top and self.bottom >= other.bottom
                and self.left <= other.left and self.right >= other.right)

    def to_dict(self) -> dict:
        return {"top": self.top, "bottom": self.bottom, "left": self.left,
                "right": self.right, "empty": self.empty}


def msd_curves(a, b) -> MsdCurves:
    """Directional mean squared difference curves of an N x M pair."""
    a = as_image(a)
    b = as_image(b)
    check_same_shape(a, b)
    sq = (a.astype(np.float64) - b.astype(np.float64)) ** 2
    top_down = sq.mean(axis=1)
    left_right = sq.mean(axis=0)
    return MsdCurves(
        top_down=top_down,
        bottom_up=top_down[::-1].copy(),
        left_right=left_right,
        right_left=left_right[::-1].copy(),
    )


def ffp_threshold(curve: Sequence[float]) -> float:
    """Mean of the curve; the default peak threshold for :func:`find_first_point`."""
    values = np.asarray(curve, dtype=np.float64)
    if values.size == 0:
        raise ValueError("curve is empty")
    return float(values.mean())


def find_first_point(curve: Sequence[float], t: float) -> Optional[int]:
    """Index where the first ascent to a local maximum above ``t`` starts.

    The curve is split into maximal strictly increasing runs. The start of
    the first run whose last (peak) value reaches ``t`` is returned, or
    ``None`` when no run peaks there. A peak must also be positive, so a
    flat curve sitting exactly at its own mean still qualifies while an
    all-zero curve never does.
    """
    if t < 0:
        raise ValueError("threshold must be non-negative")
    values = np.asarray(curve, dtype=np.float64)
    n = values.size
    start = 0
    for k in range(n):
        if k + 1 < n and values[k + 1] > values[k]:
            continue
        if values[k] >= t and values[k] > 0:
            return start
        start = k + 1
    return None


def extract_roi(a, b, threshold_scale: float = 1.0) -> Roi:
    """Bounding rectangle of significant change between ``a`` and ``b``.

    ``threshold_scale`` multiplies the mean-of-curve thresholds; smaller values
    make the extraction more sensitive (larger rectangles).
    """
    curves = msd_curves(a, b)
    t_row = threshold_scale * ffp_threshold(curves.top_down)
    t_col = threshold_scale * ffp_threshold(curves.left_right)
    return roi_from_curves(curves, t_row, t_col)


def roi_from_curves(curves: MsdCurves, t_row: float, t_col: float) -> Roi:
    n = curves.top_down.size
    m = curves.left_right.size
    sides = (
        find_first_point(curves.top_down, t_row),
        find_first_point(curves.bottom_up, t_row),
        find_first_point(curves.left_right, t_col),
        find_first_point(curves.right_left, t_col),
    )
    if any(s is None for s in sides):
        return Roi.none()
    top, from_bottom, left, from_right = sides
    bottom = n - 1 - from_bottom
    right = m - 1 - from_right
    if top > bottom or left > right:
        return Roi.none()
    return Roi(max(top, 0), min(bottom, n - 1), max(left, 0), min(right, m - 1), empty=False)
