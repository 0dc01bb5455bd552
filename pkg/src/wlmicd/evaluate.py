"""Pixel-level scoring of change masks against simulator ground truth."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .eroc import Roi
from .features import SimilarityMap
from .imgcore import as_mask, check_same_shape

MEASURES = ("acc", "ppv", "spc", "tpr", "fpr", "vor")
BANDS = ("<10%TV", "10-30%TV", ">30%TV")
OVERALL = "overall"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass
class EvalReport:
    """The six measures of one prediction; ``None`` marks an undefined ratio (0/0)."""

    counts: ConfusionCounts
    acc: Optional[float]
    ppv: Optional[float]
    spc: Optional[float]
    tpr: Optional[float]
    fpr: Optional[float]
    vor: Optional[float]
    auc: Optional[float] = None
    band: str = OVERALL
    config: dict = field(default_factory=dict)

    def measure(self, name: str) -> Optional[float]:
        return getattr(self, name)

    def to_dict(self) -> dict:
        metrics = {name: getattr(self, name) for name in MEASURES}
        if self.auc is not None:
            metrics["auc"] = self.auc
        return {
            "counts": self.counts.to_dict(),
            "metrics": metrics,
            "band": self.band,
            "config_echo": self.config,
        }


REPORT_SCHEMA = {
    "type": "object",
    "required": ["counts", "metrics", "band", "config_echo"],
    "properties": {
        "counts": {
            "type": "object",
            "required": ["tp", "fp", "fn", "tn"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("tp", "fp", "fn", "tn")},
        },
        "metrics": {
            "type": "object",
            "required": list(MEASURES),
            "properties": {
                **{k: {"type": ["number", "null"], "minimum": 0, "maximum": 1} for k in MEASURES},
                "auc": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "band": {"enum": [*BANDS, OVERALL]},
        "config_echo": {"type": "object"},
    },
}


def confusion(pred, gt, roi: Optional[Roi] = None) -> ConfusionCounts:
    """Tally TP/FP/FN/TN over the pixels of ``roi`` (whole frame when ``None``)."""
    pred = as_mask(pred)
    gt = as_mask(gt)
    check_same_shape(pred, gt)
    if roi is not None:
        sl = roi.slices
        pred, gt = pred[sl], gt[sl]
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def metrics(c: ConfusionCounts, band: str = OVERALL, auc: Optional[float] = None,
            config: Optional[dict] = None) -> EvalReport:
    if c.total == 0:
        raise ValueError("no pixels were evaluated")
    return EvalReport(
        counts=c,
        acc=_ratio(c.tp + c.tn, c.total),
        ppv=_ratio(c.tp, c.tp + c.fp),
        spc=_ratio(c.tn, c.tn + c.fp),
        tpr=_ratio(c.tp, c.tp + c.fn),
        fpr=_ratio(c.fp, c.fp + c.tn),
        vor=_ratio(c.tp, c.tp + c.fp + c.fn),
        auc=auc,
        band=band,
        config=dict(config or {}),
    )


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
        return buf.getvalue()


def roc_from_scores(scores, labels, thresholds: Sequence[float],
                    rule: str = "ge") -> RocCurve:
    """ROC of a thresholded score over a sweep of thresholds.

    ``rule="ge"`` predicts change where ``score >= t``; ``rule="lt"`` where
    ``score < t``. The (0, 0) and (1, 1) endpoints are always included.
    Points are ordered by increasing false positive rate.
    """
    if rule not in ("ge", "lt"):
        raise ValueError("rule must be 'ge' or 'lt'")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("ground truth must contain both changed and unchanged pixels")
    th = np.unique(np.asarray(thresholds, dtype=np.float64))
    below_pos = np.searchsorted(np.sort(scores[labels]), th, side="left")
    below_neg = np.searchsorted(np.sort(scores[~labels]), th, side="left")
    if rule == "ge":
        tp, fp = pos - below_pos, neg - below_neg
        ends = (np.inf, -np.inf)
    else:
        tp, fp = below_pos, below_neg
        ends = (-np.inf, np.inf)
    fpr = np.concatenate([[0.0], fp / neg, [1.0]])
    tpr = np.concatenate([[0.0], tp / pos, [1.0]])
    th = np.concatenate([[ends[0]], th, [ends[1]]])
    order = np.lexsort((tpr, fpr))
    return RocCurve(fpr[order], tpr[order], th[order])


def roc_curve(simmap: SimilarityMap, gt, thresholds: Optional[Sequence[float]] = None) -> RocCurve:
    """ROC of a feature map inside its Roi.

    SimRate maps predict change where ``SimRate < t``; GLRT maps where the
    statistic is ``>= t``. Without explicit thresholds every distinct map
    value is used, which gives the exact empirical curve.
    """
    gt = as_mask(gt, simmap.values.shape)
    sl = simmap.roi.slices
    vals = simmap.values[sl].ravel()
    labels = gt[sl].ravel()
    if thresholds is None:
        thresholds = np.unique(vals)
        if not simmap.higher_is_change:
            thresholds = np.append(thresholds, np.inf)
    rule = "ge" if simmap.higher_is_change else "lt"
    return roc_from_scores(vals, labels, thresholds, rule)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    x, y = curve.fpr, curve.tpr
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def aggregate(reports: Iterable[EvalReport]) -> dict:
    """Mean of each measure per size band, plus an overall column.

    Undefined values are skipped; a band with no reports is absent. Returns
    ``{band: {measure: mean or None, "n": count}}``.
    """
    reports = list(reports)
    groups = {band: [r for r in reports if r.band == band] for band in BANDS}
    groups[OVERALL] = reports
    table = {}
    for band in (OVERALL, *BANDS):
        rows = groups[band]
        if not rows:
            continue
        entry = {"n": len(rows)}
        for name in (*MEASURES, "auc"):
            vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            entry[name] = float(np.mean(vals)) if vals else None
        table[band] = entry
    return table


def aggregate_csv(table: dict, label: str = "") -> str:
    """Render an :func:`aggregate` table with one row per measure."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    bands = [b for b in (OVERALL, *BANDS) if b in table]
    w.writerow(["method", "measure", *bands])
    for name in (*MEASURES, "auc", "n"):
        row = []
        for b in bands:
            v = table[b].get(name)
            row.append("" if v is None else (v if name == "n" else f"{v:.6f}"))
        w.writerow([label, name, *row])
    return buf.getvalue()
