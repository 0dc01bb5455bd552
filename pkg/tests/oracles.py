"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the batch code paths of the package; every quantity is
rebuilt from loops, dicts or full 256 x 256 tables.
"""

import math
from collections import Counter
from fractions import Fraction

import numpy as np
from scipy import ndimage as ndi


def merged_pairs(wa, wb, delta):
    wa = np.asarray(wa, dtype=np.int64).ravel().tolist()
    wb = np.asarray(wb, dtype=np.int64).ravel().tolist()
    return [(x, x if abs(x - y) <= delta else y) for x, y in zip(wa, wb)]


def lmi_table(wa, wb, delta=4):
    """Mutual information as a sum over the cells of a full joint table."""
    table = np.zeros((256, 256))
    for x, y in merged_pairs(wa, wb, delta):
        table[x, y] += 1
    p = table / table.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    total = 0.0
    for x, y in zip(*np.nonzero(p)):
        total += p[x, y] * math.log2(p[x, y] / (px[x] * py[y]))
    return total


def entropy(w):
    counts = Counter(np.asarray(w).ravel().tolist())
    n = sum(counts.values())
    return -sum(c / n * math.log2(c / n) for c in counts.values())


def wlmi_loop(wa, wb, delta=4):
    """Per-pixel weighted mutual information, straight from its definition."""
    wa = np.asarray(wa, dtype=np.int64)
    wb = np.asarray(wb, dtype=np.int64)
    size = wa.shape[0]
    r = size // 2
    pairs = merged_pairs(wa, wb, delta)
    m = len(pairs)
    joint = Counter(pairs)
    mx = Counter(x for x, _ in pairs)
    my = Counter(y for _, y in pairs)
    n_change = sum(1 for x, y in zip(wa.ravel(), wb.ravel()) if abs(int(x) - int(y)) > delta)
    total = 0.0
    for idx, (x, y) in enumerate(pairs):
        di, dj = divmod(idx, size)
        d = max(abs(di - r), abs(dj - r))
        if d == 0:
            beta = 2.0 / (max(n_change, 1) * math.exp(abs(x - y) / 255.0))
        else:
            beta = 1.0 / d
        mi = joint[(x, y)]
        total += beta * (mi / m) * math.log2(m * mi / (mx[x] * my[y]))
    return total


def sim_rate_loop(wa, wb, method="wlmi", delta=4):
    if method == "lmi":
        num, den = lmi_table(wa, wb, delta), entropy(wa)
    else:
        num, den = wlmi_loop(wa, wb, delta), wlmi_loop(wa, wa, delta)
    if den <= 1e-12:
        same = all(abs(int(x) - int(y)) <= delta
                   for x, y in zip(np.ravel(wa), np.ravel(wb)))
        return 100.0 if same else 0.0
    return min(max(100.0 * num / den, 0.0), 100.0)


def flood_fill(values, seeds, threshold):
    """Union of the 8-connected components of ``values < threshold`` that hold a seed."""
    below = np.nan_to_num(values, nan=np.inf) < threshold
    labels, _ = ndi.label(below, structure=np.ones((3, 3), dtype=int))
    keep = {labels[r, c] for r, c in seeds if labels[r, c] > 0}
    return np.isin(labels, list(keep)) & below


def lut_fraction(src_hist, ref_hist):
    """Histogram matching LUT with exact rational CDFs."""
    ns, nr = sum(src_hist), sum(ref_hist)
    cdf_ref, acc = [], 0
    for c in ref_hist:
        acc += c
        cdf_ref.append(Fraction(acc, nr))
    lut, acc = [], 0
    for c in src_hist:
        acc += c
        target = Fraction(acc, ns)
        lut.append(next((w for w, f in enumerate(cdf_ref) if f >= target), 255))
    return lut


def confusion_loop(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def auc_rank(scores, labels):
    """Probability a positive outscores a negative, ties counted half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos, neg = scores[labels], scores[~labels]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (pos.size * neg.size)


def msd_loop(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = a.shape
    rows = [sum((a[i, j] - b[i, j]) ** 2 for j in range(m)) / m for i in range(n)]
    cols = [sum((a[i, j] - b[i, j]) ** 2 for i in range(n)) / n for j in range(m)]
    return rows, cols
