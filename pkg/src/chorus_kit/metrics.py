"""Frame-level precision/recall/F1, rank AUC, and self-similarity matrices."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import UsageError

log = logging.getLogger(__name__)


def confusion(pred, truth) -> tuple[int, int, int, int]:
    pred = np.asarray(getattr(pred, "values", pred)).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise UsageError(f"prediction length {pred.shape} differs from truth length {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return tp, fp, fn, tn


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def prf(pred, truth) -> tuple[float, float, float]:
    """Precision, recall, F1; every 0/0 counts as 0."""
    tp, fp, fn, _ = confusion(pred, truth)
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def auc(scores, truth) -> float:
    """Mann–Whitney AUC: P(score of a positive > score of a negative), ties 0.5.

    Returns NaN when ``truth`` holds a single class.
    """
    scores = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise UsageError(f"score length {scores.shape} differs from truth length {truth.shape}")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def ssm(e, distance: str = "euclidean") -> np.ndarray:
    """Pairwise distance matrix between the rows of ``e`` (``n × d``)."""
    x = np.asarray(e, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise UsageError(f"ssm needs an n×d matrix with n >= 1, got {x.shape}")
    if distance == "euclidean":
        sq = (x * x).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2 * (x @ x.T)
        d = np.sqrt(np.clip(d2, 0, None))
    elif distance == "cosine":
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        u = x / safe[:, None]
        d = np.clip(1.0 - u @ u.T, 0, 2)
        zero = norms == 0
        # a zero vector is at distance 0 from another zero vector, 1 from anything else
        d[zero, :] = 1.0
        d[:, zero] = 1.0
        d[np.ix_(zero, zero)] = 0.0
    else:
        raise UsageError(f"unknown distance {distance!r}")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class SongScore:
    song_id: str
    f1: float
    auc: float
    recall: float
    precision: float
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class EvalReport:
    songs: list[SongScore] = field(default_factory=list)

    def add(self, song_id: str, scores, mask, truth) -> SongScore:
        p, r, f = prf(mask, truth)
        a = auc(scores, truth)
        if math.isnan(a):
            log.warning("song %s has single-class truth; excluded from the AUC mean", song_id)
        tp, fp, fn, tn = confusion(mask, truth)
        row = SongScore(song_id, f, a, r, p, tp, fp, fn, tn)
        self.songs.append(row)
        return row

    def mean(self, key: str) -> float:
        vals = [getattr(s, key) for s in self.songs if not math.isnan(getattr(s, key))]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def f1(self) -> float:
        return self.mean("f1")

    @property
    def auc(self) -> float:
        return self.mean("auc")

    def write(self, path) -> None:
        """TSV, one row per song and a closing ``MEAN`` row of unweighted means."""
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["id", "f1", "auc", "recall", "precision", "tp", "fp", "fn", "tn"])
            for s in self.songs:
                w.writerow([s.song_id, _fmt(s.f1), _fmt(s.auc), _fmt(s.recall), _fmt(s.precision),
                            s.tp, s.fp, s.fn, s.tn])
            totals = [sum(getattr(s, k) for s in self.songs) for k in ("tp", "fp", "fn", "tn")]
            w.writerow(["MEAN", _fmt(self.f1), _fmt(self.auc), _fmt(self.mean("recall")),
                        _fmt(self.mean("precision")), *totals])

    @classmethod
    def read(cls, path) -> "EvalReport":
        report = cls()
        with Path(path).open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        for row in rows[1:]:
            if row[0] == "MEAN":
                continue
            report.songs.append(SongScore(row[0], *(float(v) for v in row[1:5]), *(int(v) for v in row[5:9])))
        return report


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))
