"""Curve smoothing, adaptive thresholding, and segment extraction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError

HALF_WINDOW = 4
FLAT_GUARD = 0.05


@dataclass
class BinaryMask:
    values: np.ndarray
    threshold_used: float

    @property
    def guard_fired(self) -> bool:
        return math.isinf(self.threshold_used)


def median_smooth(y, statistic: str = "median") -> np.ndarray:
    """Nine-point window filter that leaves the first and last four samples as-is.

    With 1-based ``i``, samples with ``4 < i <= n - 4`` are replaced by the
    window statistic over ``y[i-4 .. i+4]``. ``statistic="trimmed-mean"``
    drops the window's min and max and averages the remaining seven.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    m = y.copy()
    if n < 2 * HALF_WINDOW + 1:
        return m
    windows = np.lib.stride_tricks.sliding_window_view(y, 2 * HALF_WINDOW + 1)
    if statistic == "median":
        inner = np.median(windows, axis=1)
    elif statistic == "trimmed-mean":
        s = np.sort(windows, axis=1)
        inner = s[:, 1:-1].mean(axis=1)
    else:
        raise ValueError(f"unknown smoothing statistic {statistic!r}")
    # window k is centred on 0-based index k + 4, i.e. 1-based i = k + 5 in (4, n - 4]
    m[HALF_WINDOW:n - HALF_WINDOW] = inner
    return m


def adaptive_threshold(m, rule: str = "literal") -> float:
    """Half the curve's range; ``rule="midpoint"`` adds the minimum back."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if rule == "literal":
        return 0.5 * (hi - lo)
    if rule == "midpoint":
        return lo + 0.5 * (hi - lo)
    raise ValueError(f"unknown threshold rule {rule!r}")


def binarize(m, t: float, flat_guard: float = FLAT_GUARD) -> BinaryMask:
    m = np.asarray(m, dtype=np.float64)
    if m.size and m.max() - m.min() < flat_guard:
        return BinaryMask(np.zeros(m.shape, dtype=np.int8), math.inf)
    return BinaryMask((m > t).astype(np.int8), float(t))


def segments_from_mask(b) -> list[tuple[int, int]]:
    """Maximal runs of ones as half-open ``(start, end)`` second ranges."""
    v = np.asarray(b.values if isinstance(b, BinaryMask) else b, dtype=np.int8)
    edges = np.diff(np.concatenate([[0], v, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def mask_from_segments(segments, n: int) -> np.ndarray:
    v = np.zeros(n, dtype=np.int8)
    for s, e in segments:
        v[s:e] = 1
    return v


def detect(curve, smooth: str = "median", threshold: str = "literal", flat_guard: float = FLAT_GUARD):
    """Smooth, threshold, and binarise a probability curve.

    Returns ``(smoothed, mask)``.
    """
    m = median_smooth(curve, smooth)
    return m, binarize(m, adaptive_threshold(m, threshold), flat_guard)


CURVE_HEADER = ["second", "probability", "binary"]


def write_curve(path, probabilities, mask) -> None:
    """CSV with one row per second: index, raw probability, binarised value."""
    values = np.asarray(getattr(mask, "values", mask))
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for i, (p, b) in enumerate(zip(probabilities, values)):
            w.writerow([i, repr(float(p)), int(b)])


def read_curve(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_curve`; returns ``(probabilities, binary)``."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CURVE_HEADER:
        raise ParseError(f"header must be {','.join(CURVE_HEADER)}", 1, path)
    probs, bits = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ParseError(f"expected 3 columns, found {len(row)}", lineno, path)
        try:
            second, p, b = int(row[0]), float(row[1]), int(row[2])
        except ValueError:
            raise ParseError(f"malformed row {row!r}", lineno, path) from None
        if second != lineno - 2 or b not in (0, 1) or not 0.0 <= p <= 1.0:
            raise ParseError(f"row {row!r} out of sequence or range", lineno, path)
        probs.append(p)
        bits.append(b)
    if not probs:
        raise ParseError("curve has no rows", 2, path)
    return np.array(probs), np.array(bits, dtype=np.int8)
