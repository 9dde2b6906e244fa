import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chorus_kit.postprocess import (
    BinaryMask,
    adaptive_threshold,
    binarize,
    detect,
    mask_from_segments,
    median_smooth,
    segments_from_mask,
)

curves = arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1, allow_nan=False))


def test_impulse_rejected():
    y = [0, 0, 0, 0, 1, 0, 0, 0, 0]
    np.testing.assert_array_equal(median_smooth(y), np.zeros(9))


def test_constant_curve_unchanged():
    np.testing.assert_array_equal(median_smooth(np.full(20, 0.3)), np.full(20, 0.3))


def test_short_curve_passes_through():
    y = np.array([0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6])
    np.testing.assert_array_equal(median_smooth(y), y)


def test_edges_kept_and_interior_filtered():
    y = np.arange(12, dtype=float)[::-1] ** 2
    m = median_smooth(y)
    np.testing.assert_array_equal(m[:4], y[:4])
    np.testing.assert_array_equal(m[-4:], y[-4:])
    for i in range(4, 8):
        assert m[i] == np.median(y[i - 4:i + 5])


def test_trimmed_mean_drops_extremes():
    y = np.array([0, 0, 0, 0, 10, 1, 1, 1, 1, -10.0])
    m = median_smooth(y, "trimmed-mean")
    # window at index 4 (1-based 5) is y[0:9]; one 0 and the 10 are dropped
    assert m[4] == pytest.approx(np.mean([0, 0, 0, 1, 1, 1, 1]))


def test_unknown_statistic():
    with pytest.raises(ValueError):
        median_smooth(np.zeros(10), "mode")


@settings(max_examples=200, deadline=None)
@given(curves)
def test_smoothing_stays_in_range(y):
    m = median_smooth(y)
    assert m.min() >= y.min() and m.max() <= y.max()


def test_threshold_examples():
    assert adaptive_threshold([0.1, 0.9, 0.5]) == pytest.approx(0.4, abs=1e-15)
    assert adaptive_threshold(np.full(5, 0.7)) == 0
    assert adaptive_threshold([0, 1]) == 0.5
    assert adaptive_threshold([0, 1], "midpoint") == 0.5
    assert adaptive_threshold([0.2, 0.6], "midpoint") == pytest.approx(0.4)


def test_binarize_examples():
    assert binarize([0.1, 0.9, 0.5], 0.4).values.tolist() == [0, 1, 1]
    assert binarize([0.2, 0.8], 0.3).values.tolist() == [0, 1]


def test_flat_guard():
    b = binarize(np.full(10, 0.3), 0.0)
    assert not b.values.any()
    assert b.guard_fired and math.isinf(b.threshold_used)
    assert not binarize(np.full(10, 0.3), 0.0, flat_guard=0.0).guard_fired


@settings(max_examples=200, deadline=None)
@given(curves, st.floats(0.01, 100))
def test_positive_scaling_invariance(m, a):
    base = binarize(m, adaptive_threshold(m))
    scaled = binarize(a * m, adaptive_threshold(a * m), flat_guard=0.05 * a)
    np.testing.assert_array_equal(base.values, scaled.values)


def test_segments_examples():
    assert segments_from_mask(BinaryMask(np.array([0, 1, 1, 0, 1]), 0.5)) == [(1, 3), (4, 5)]
    assert segments_from_mask(np.zeros(6)) == []
    assert segments_from_mask(np.ones(5)) == [(0, 5)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), max_size=8))
def test_segment_round_trip(gaps):
    segments, t = [], 0
    for gap, length in gaps:
        segments.append((t + gap, t + gap + length))
        t += gap + length
    n = t + 2
    assert segments_from_mask(mask_from_segments(segments, n)) == segments


def test_detect_pipeline():
    curve = np.r_[np.zeros(20), np.ones(20), np.zeros(20)] * 0.8 + 0.1
    smoothed, mask = detect(curve)
    assert segments_from_mask(mask) == [(20, 40)]
    assert mask.threshold_used == pytest.approx(0.4)
    assert smoothed.shape == curve.shape
