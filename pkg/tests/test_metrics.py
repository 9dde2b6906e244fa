import csv
import itertools
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chorus_kit.errors import UsageError
from chorus_kit.metrics import EvalReport, auc, confusion, prf, ssm

GOLDEN = Path(__file__).parent / "data" / "metrics_golden.tsv"


def pairs_auc(scores, truth):
    """All-pairs enumeration, exact rational arithmetic."""
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = Fraction(0)
    for p, n in itertools.product(pos, neg):
        wins += 1 if p > n else Fraction(1, 2) if p == n else 0
    return wins / (len(pos) * len(neg))


def naive_distances(x, metric):
    n = len(x)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if metric == "euclidean":
                d[i, j] = math.sqrt(sum((a - b) ** 2 for a, b in zip(x[i], x[j])))
            else:
                dot = sum(a * b for a, b in zip(x[i], x[j]))
                d[i, j] = 1 - dot / (math.sqrt(sum(a * a for a in x[i])) * math.sqrt(sum(b * b for b in x[j])))
    np.fill_diagonal(d, 0)
    return d


def test_prf_examples():
    assert prf([1, 0, 1], [1, 0, 1]) == (1, 1, 1)
    p, r, f = prf([1, 1, 1, 1], [1, 1, 0, 0])
    assert (p, r) == (0.5, 1.0) and f == pytest.approx(2 / 3)
    assert prf([0, 0, 0], [1, 0, 1]) == (0, 0, 0)


def test_length_mismatch():
    with pytest.raises(UsageError):
        prf([1, 0], [1, 0, 1])
    with pytest.raises(UsageError):
        auc([0.1, 0.2], [1])


def test_auc_examples():
    assert auc([0.1, 0.9], [0, 1]) == 1.0
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    assert math.isnan(auc([0.1, 0.2], [1, 1]))


@pytest.mark.parametrize("seed", range(50))
def test_auc_equals_pair_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 21))
    truth = rng.integers(0, 2, n)
    truth[0], truth[1] = 0, 1
    # coarse scores so that ties actually occur
    scores = rng.integers(0, 6, n) / 5
    assert auc(scores, truth) == float(pairs_auc(scores.tolist(), truth.tolist()))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=2, max_size=30))
def test_auc_invariant_under_monotone_maps(data):
    # a 0.1 grid keeps every map strictly increasing in floating point
    scores = np.array([s / 10 for s, _ in data])
    truth = np.array([t for _, t in data])
    if truth.all() or not truth.any():
        return
    base = auc(scores, truth)
    for f in (np.exp, lambda x: 3 * x + 1, lambda x: x ** 3, np.arctan):
        assert auc(f(scores), truth) == pytest.approx(base, abs=1e-12)


def _golden_rows():
    with GOLDEN.open(encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines, delimiter="\t"))


@pytest.mark.parametrize("row", _golden_rows(), ids=lambda r: r["case"])
def test_golden_file(row):
    def ints(s):
        return [int(x) for x in s.split(",")]

    pred, truth = ints(row["pred"]), ints(row["truth"])
    scores = [float(x) for x in row["scores"].split(",")]
    p, r, f = prf(pred, truth)
    for got, key in ((p, "precision"), (r, "recall"), (f, "f1"), (auc(scores, truth), "auc")):
        want = float(Fraction(row[key]))
        assert abs(got - want) <= 1e-15, key


def test_confusion_counts():
    assert confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1]) == (2, 1, 1, 1)


def test_ssm_identical_rows():
    assert not ssm(np.ones((4, 3))).any()


def test_ssm_orthogonal_cosine():
    d = ssm(np.eye(2), "cosine")
    np.testing.assert_allclose(d, [[0, 1], [1, 0]])


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_ssm_matches_double_loop(metric):
    x = np.random.default_rng(3).standard_normal((5, 3))
    np.testing.assert_allclose(ssm(x, metric), naive_distances(x.tolist(), metric), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 1000), st.sampled_from(["euclidean", "cosine"]))
def test_ssm_symmetric_nonnegative(n, d, seed, metric):
    x = np.random.default_rng(seed).standard_normal((n, d))
    m = ssm(x, metric)
    assert (m == m.T).all() and (np.diag(m) == 0).all() and (m >= 0).all()


def test_report_round_trip(tmp_path):
    rep = EvalReport()
    rep.add("a", [0.9, 0.1, 0.8], [1, 0, 1], [1, 0, 1])
    rep.add("b", [0.4, 0.6, 0.5, 0.2], [0, 1, 1, 0], [1, 1, 0, 0])
    rep.add("c", [0.2, 0.3], [0, 0], [0, 0])
    path = tmp_path / "r.tsv"
    rep.write(path)
    rows = path.read_text().splitlines()
    assert rows[0].split("\t") == ["id", "f1", "auc", "recall", "precision", "tp", "fp", "fn", "tn"]
    assert rows[-1].startswith("MEAN\t")
    back = EvalReport.read(path)
    assert back.songs[:2] == rep.songs[:2]
    assert math.isnan(back.songs[2].auc)
    # c has single-class truth: AUC mean covers a and b only
    assert rep.auc == pytest.approx((1.0 + rep.songs[1].auc) / 2)
    for s in rep.songs:
        if s.precision + s.recall:
            assert s.f1 == pytest.approx(2 * s.precision * s.recall / (s.precision + s.recall))
