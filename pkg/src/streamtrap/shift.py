"""Temporal-shift and confidence diagnostics.

The class-distribution shift of a camera is the L1 distance between the
normalized class histograms of consecutive intervals, averaged over all
steps (range 0..2). Confidence is summarized by the maximum softmax
probability of temperature-scaled logits, plus the top1-top2 softmax gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .adapt import AdaptedHead, logits


@dataclass
class TcdsReport:
    camera_id: str
    per_step: list[tuple[int, float]]  # (step j, L1 distance between j and j+1)
    tcds: float


@dataclass
class ConfidenceSummary:
    scores: np.ndarray  # per-image MSP
    mean_msp: float
    temperature: float
    gaps: np.ndarray  # per-image top1 - top2 softmax probability
    mean_gap: float


def _normalize_histogram(hist: Mapping[str, int]) -> dict[str, float]:
    total = sum(hist.values())
    if total <= 0:
        raise ValueError("empty interval histogram")
    return {cls: n / total for cls, n in hist.items()}


def tcds(histograms: Sequence[Mapping[str, int]], camera_id: str = "") -> TcdsReport:
    """Mean consecutive L1 distance between normalized class distributions."""
    if len(histograms) < 2:
        raise ValueError("shift needs at least 2 intervals")
    dists = [_normalize_histogram(h) for h in histograms]
    per_step = []
    for j in range(len(dists) - 1):
        p, q = dists[j], dists[j + 1]
        classes = set(p) | set(q)
        l1 = sum(abs(p.get(c, 0.0) - q.get(c, 0.0)) for c in classes)
        per_step.append((j, float(l1)))
    return TcdsReport(
        camera_id=camera_id,
        per_step=per_step,
        tcds=float(np.mean([d for _, d in per_step])),
    )


def _softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    scaled = scores / temperature
    scaled = scaled - np.max(scaled, axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / np.sum(e, axis=-1, keepdims=True)


def msp(head: AdaptedHead, embedding: np.ndarray, temperature: float = 1.0) -> float:
    """Maximum softmax probability of one embedding's logits."""
    probs = _softmax(np.atleast_2d(logits(head, embedding)), temperature)
    return float(np.max(probs[0]))


def msp_scores(
    head: AdaptedHead, embeddings: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    probs = _softmax(np.atleast_2d(logits(head, embeddings)), temperature)
    return np.max(probs, axis=1)


def confidence_summary(
    head: AdaptedHead, embeddings: np.ndarray, temperature: float = 1.0
) -> ConfidenceSummary:
    probs = _softmax(np.atleast_2d(logits(head, embeddings)), temperature)
    ordered = np.sort(probs, axis=1)
    scores = ordered[:, -1]
    gaps = ordered[:, -1] - ordered[:, -2] if probs.shape[1] >= 2 else np.zeros(len(probs))
    return ConfidenceSummary(
        scores=scores,
        mean_msp=float(np.mean(scores)),
        temperature=temperature,
        gaps=gaps,
        mean_gap=float(np.mean(gaps)),
    )


def confidence_accuracy_correlation(
    points: Sequence[tuple[float, float]],
) -> float | None:
    """Pearson correlation of (mean confidence, accuracy) pairs.

    Returns None when undefined (fewer than 3 points is an error; zero
    variance in either coordinate yields None).
    """
    if len(points) < 3:
        raise ValueError("correlation needs at least 3 points")
    x = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    xd, yd = x - x.mean(), y - y.mean()
    sx = math.sqrt(float(np.sum(xd * xd)))
    sy = math.sqrt(float(np.sum(yd * yd)))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.sum(xd * yd) / (sx * sy))
