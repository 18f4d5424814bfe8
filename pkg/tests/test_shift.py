"""Shift metric, MSP confidence, correlation diagnostics."""

import math

import numpy as np
import pytest

from streamtrap.adapt import AdaptedHead
from streamtrap.shift import (
    confidence_accuracy_correlation,
    confidence_summary,
    msp,
    msp_scores,
    tcds,
)


def head_of(weights, labels=None):
    weights = np.asarray(weights, dtype=np.float64)
    labels = labels or [f"c{i}" for i in range(weights.shape[0])]
    return AdaptedHead(labels=labels, base_weights=weights)


# --- TCDS ---------------------------------------------------------------------


def test_tcds_no_shift_is_zero():
    hists = [{"a": 30, "b": 10}] * 4
    assert tcds(hists).tcds == 0.0


def test_tcds_disjoint_support_is_two():
    assert tcds([{"a": 25}, {"b": 60}]).tcds == pytest.approx(2.0)


def test_tcds_worked_example():
    hists = [{"a": 5, "b": 5}, {"a": 10}, {"a": 7, "b": 7}]
    report = tcds(hists)
    assert [d for _, d in report.per_step] == pytest.approx([1.0, 1.0])
    assert report.tcds == pytest.approx(1.0)


def test_tcds_needs_two_intervals():
    with pytest.raises(ValueError):
        tcds([{"a": 1}])


def test_tcds_reversal_symmetric():
    rng = np.random.default_rng(0)
    hists = [
        {f"c{i}": int(n) for i, n in enumerate(rng.integers(1, 50, size=4))} for _ in range(6)
    ]
    assert tcds(hists).tcds == pytest.approx(tcds(hists[::-1]).tcds)


def test_tcds_scale_invariant_per_interval():
    hists = [{"a": 3, "b": 1}, {"a": 1, "b": 3}]
    scaled = [{"a": 300, "b": 100}, {"a": 5, "b": 15}]
    assert tcds(hists).tcds == pytest.approx(tcds(scaled).tcds)


def test_tcds_range():
    rng = np.random.default_rng(1)
    for _ in range(50):
        hists = [
            {f"c{i}": int(n) + 1 for i, n in enumerate(rng.integers(0, 40, size=5))}
            for _ in range(4)
        ]
        report = tcds(hists)
        assert 0.0 <= report.tcds <= 2.0
        assert all(0.0 <= d <= 2.0 for _, d in report.per_step)


# --- MSP ---------------------------------------------------------------------


def test_msp_uniform_logits():
    head = head_of(np.zeros((4, 3)))
    assert msp(head, np.ones(3)) == pytest.approx(0.25)


def test_msp_worked_example():
    head = head_of(np.array([[2.0, 0.0], [0.0, 0.0]]))
    z = np.array([1.0, 0.0])  # logits (2, 0)
    expected = math.exp(2) / (math.exp(2) + 1)
    assert msp(head, z) == pytest.approx(expected, abs=1e-12)


def test_msp_temperature_limit():
    rng = np.random.default_rng(2)
    head = head_of(rng.normal(size=(5, 8)))
    z = rng.normal(size=8)
    assert msp(head, z, temperature=1e6) == pytest.approx(0.2, abs=1e-6)


def test_msp_invalid_temperature():
    head = head_of(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        msp(head, np.zeros(2), temperature=0.0)


def test_msp_shift_invariant():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 6))
    z = rng.normal(size=6)
    base = msp(head_of(w), z)
    # adding a constant to every logit: shift every weight row by c * z / |z|^2
    c = 2.5
    shifted = w + c * z / float(z @ z)
    assert msp(head_of(shifted), z) == pytest.approx(base, abs=1e-9)


def test_msp_scores_extreme_logits_stable():
    head = head_of(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
    scores = msp_scores(head, np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.all(np.isfinite(scores))
    assert scores == pytest.approx([1.0, 1.0])


def test_confidence_summary_fields():
    rng = np.random.default_rng(4)
    head = head_of(rng.normal(size=(3, 5)))
    z = rng.normal(size=(20, 5))
    summary = confidence_summary(head, z, temperature=1.0)
    assert summary.scores.shape == (20,)
    assert np.all(summary.scores > 0) and np.all(summary.scores <= 1)
    assert np.all(summary.gaps >= 0) and np.all(summary.gaps < 1)
    assert summary.mean_msp == pytest.approx(float(np.mean(summary.scores)))


# --- correlation ---------------------------------------------------------------


def test_correlation_perfectly_linear():
    up = [(0.1, 0.2), (0.2, 0.4), (0.3, 0.6), (0.4, 0.8)]
    down = [(x, 1 - y) for x, y in up]
    assert confidence_accuracy_correlation(up) == pytest.approx(1.0)
    assert confidence_accuracy_correlation(down) == pytest.approx(-1.0)


def test_correlation_worked_example():
    assert confidence_accuracy_correlation([(1, 1), (2, 3), (3, 2)]) == pytest.approx(0.5)


def test_correlation_zero_variance_undefined():
    assert confidence_accuracy_correlation([(1, 1), (1, 2), (1, 3)]) is None


def test_correlation_too_few_points():
    with pytest.raises(ValueError):
        confidence_accuracy_correlation([(1, 1), (2, 2)])
