"""Adapt-or-skip benchmark built from completed streaming runs.

At interval j the practitioner holds the head trained through j-1 and the
unlabeled images of interval j, and must choose: adapt (train through j)
or skip. The ground-truth action is whichever head scores higher on the
next interval's test split (ties favor skipping, which is free).

Non-oracle policies see only a :class:`DecisionFeatures` view, never the
two accuracies or the ground truth; the per-policy helpers take the
features object alone, which keeps that separation structural.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adapt import AdaptedHead, head_from_text
from .engine import RunResult, evaluate_head, usable_intervals
from .intervals import IntervalBenchmark
from .shift import msp_scores
from .store import EmbeddingMatrix, TextHead

ADAPT = "adapt"
SKIP = "skip"

POLICY_RANDOM = "random"
POLICY_MSP = "msp_threshold"
POLICY_PROTOTYPE = "prototype_distance"
POLICY_ALWAYS_ADAPT = "always_adapt"
POLICY_ALWAYS_SKIP = "always_skip"
POLICY_ORACLE = "oracle"
ALL_POLICIES = (
    POLICY_RANDOM,
    POLICY_MSP,
    POLICY_PROTOTYPE,
    POLICY_ALWAYS_ADAPT,
    POLICY_ALWAYS_SKIP,
    POLICY_ORACLE,
)


@dataclass(frozen=True)
class DecisionFeatures:
    """Deployment-time signals: candidate-model and zero-shot statistics
    on the unlabeled interval. This is all a non-oracle policy may see."""

    mean_msp: float
    mean_prototype_distance: float
    zs_mean_msp: float
    zs_mean_prototype_distance: float


@dataclass(frozen=True)
class Thresholds:
    msp: float
    prototype: float


@dataclass
class DecisionInstance:
    camera_id: str
    interval: int  # the j whose data triggers the decision
    prior_model: str
    candidate_model: str
    skip_accuracy: float
    adapt_accuracy: float
    ground_truth: str
    features: DecisionFeatures


@dataclass
class PolicyResult:
    policy: str
    balanced_accuracy: float  # accuracy obtained by following the decisions
    binary_accuracy: float  # fraction of correct adapt/skip choices
    decisions: list[str]


def _nearest_distance(points: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    # ||x - p||^2 = ||x||^2 - 2 x.p + ||p||^2, rowwise minimum over prototypes
    sq = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ prototypes.T
        + np.sum(prototypes**2, axis=1)[None, :]
    )
    return np.sqrt(np.maximum(sq.min(axis=1), 0.0))


def _class_prototypes(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    intervals: Sequence,
) -> np.ndarray:
    """Class-mean embeddings over the given intervals' train splits."""
    by_class: dict[str, list[str]] = {}
    for interval in intervals:
        for image_id in interval.train_ids:
            by_class.setdefault(benchmark.labels[image_id], []).append(image_id)
    protos = [np.mean(store.rows(ids), axis=0) for _, ids in sorted(by_class.items())]
    return np.stack(protos)


def build_decision_set(
    entries: Sequence[tuple[IntervalBenchmark, RunResult, EmbeddingMatrix]],
    text_head: TextHead,
    balance: bool = True,
    seed: int = 0,
    temperature: float = 1.0,
) -> list[DecisionInstance]:
    """One instance per eligible (camera, interval) of accumulated runs.

    Eligibility needs three consecutive usable intervals (j-1, j, j+1 in
    protocol terms), so a 2-interval camera contributes nothing. With
    ``balance`` the majority action is subsampled (deterministically by
    seed) to match the minority count.
    """
    zs_head = head_from_text(text_head)
    instances: list[DecisionInstance] = []
    for benchmark, run, store in entries:
        intervals = usable_intervals(benchmark)
        checkpoints = run.checkpoints
        if len(checkpoints) < 2:
            continue
        # checkpoint index s is trained through intervals[s]
        for s in range(1, len(checkpoints)):
            if s + 1 >= len(intervals):
                break
            prior, candidate = checkpoints[s - 1], checkpoints[s]
            current, target = intervals[s], intervals[s + 1]
            test_ids = list(target.test_ids)
            skip_acc = evaluate_head(
                prior, store, test_ids, benchmark.labels, target.index
            ).balanced_accuracy
            adapt_acc = evaluate_head(
                candidate, store, test_ids, benchmark.labels, target.index
            ).balanced_accuracy

            unlabeled = list(current.train_ids) + list(current.test_ids)
            z = store.rows(unlabeled)
            prototypes = _class_prototypes(benchmark, store, intervals[:s])
            features = DecisionFeatures(
                mean_msp=float(np.mean(msp_scores(candidate, z, temperature))),
                mean_prototype_distance=float(np.mean(_nearest_distance(z, prototypes))),
                zs_mean_msp=float(np.mean(msp_scores(zs_head, z, temperature))),
                zs_mean_prototype_distance=float(
                    np.mean(_nearest_distance(z, zs_head.base_weights))
                ),
            )
            instances.append(
                DecisionInstance(
                    camera_id=benchmark.camera_id,
                    interval=current.index,
                    prior_model=f"{benchmark.camera_id}/{intervals[s - 1].index}",
                    candidate_model=f"{benchmark.camera_id}/{current.index}",
                    skip_accuracy=skip_acc,
                    adapt_accuracy=adapt_acc,
                    ground_truth=ADAPT if adapt_acc > skip_acc else SKIP,
                    features=features,
                )
            )
    if not instances:
        raise ValueError("no eligible decision instances")
    if balance:
        instances = balance_instances(instances, seed)
    return instances


def balance_instances(
    instances: Sequence[DecisionInstance], seed: int
) -> list[DecisionInstance]:
    """Subsample the majority action to the minority count (seeded)."""
    adapts = [i for i in instances if i.ground_truth == ADAPT]
    skips = [i for i in instances if i.ground_truth == SKIP]
    rng = np.random.default_rng(seed)
    if len(adapts) > len(skips):
        keep = rng.choice(len(adapts), size=len(skips), replace=False)
        adapts = [adapts[k] for k in sorted(keep)]
    elif len(skips) > len(adapts):
        keep = rng.choice(len(skips), size=len(adapts), replace=False)
        skips = [skips[k] for k in sorted(keep)]
    merged = adapts + skips
    merged.sort(key=lambda i: (i.camera_id, i.interval))
    return merged


# Per-policy rules: deliberately take only the features view.


def _decide_msp(features: DecisionFeatures, thresholds: Thresholds) -> str:
    return ADAPT if features.mean_msp < thresholds.msp else SKIP


def _decide_prototype(features: DecisionFeatures, thresholds: Thresholds) -> str:
    return ADAPT if features.mean_prototype_distance > thresholds.prototype else SKIP


def default_thresholds(features: DecisionFeatures) -> Thresholds:
    """Per-interval thresholds taken from the zero-shot statistics."""
    return Thresholds(
        msp=features.zs_mean_msp, prototype=features.zs_mean_prototype_distance
    )


def decide(
    policy: str,
    instance: DecisionInstance,
    thresholds: Thresholds | None = None,
    rng: np.random.Generator | None = None,
) -> str:
    """Action of a policy on one instance.

    Only the oracle reads the ground truth; every other policy is routed
    through its features-only rule.
    """
    features = instance.features
    if policy == POLICY_ORACLE:
        return instance.ground_truth
    if policy == POLICY_ALWAYS_ADAPT:
        return ADAPT
    if policy == POLICY_ALWAYS_SKIP:
        return SKIP
    if policy == POLICY_RANDOM:
        rng = rng if rng is not None else np.random.default_rng(0)
        return ADAPT if rng.random() < 0.5 else SKIP
    thr = thresholds if thresholds is not None else default_thresholds(features)
    if policy == POLICY_MSP:
        return _decide_msp(features, thr)
    if policy == POLICY_PROTOTYPE:
        return _decide_prototype(features, thr)
    raise ValueError(f"unknown policy {policy!r}")


def evaluate_policies(
    instances: Sequence[DecisionInstance],
    policies: Sequence[str] = ALL_POLICIES,
    seed: int = 0,
) -> list[PolicyResult]:
    """Score each policy by followed-decision accuracy and decision accuracy."""
    if not instances:
        raise ValueError("no decision instances")
    results = []
    for policy in policies:
        rng = np.random.default_rng(seed)
        decisions = [decide(policy, inst, rng=rng) for inst in instances]
        followed = [
            inst.adapt_accuracy if d == ADAPT else inst.skip_accuracy
            for inst, d in zip(instances, decisions)
        ]
        correct = [d == inst.ground_truth for inst, d in zip(instances, decisions)]
        results.append(
            PolicyResult(
                policy=policy,
                balanced_accuracy=float(np.mean(followed)),
                binary_accuracy=float(np.mean(correct)),
                decisions=decisions,
            )
        )
    return results


def instance_to_json(instance: DecisionInstance) -> dict:
    return {
        "camera_id": instance.camera_id,
        "interval": instance.interval,
        "prior_model": instance.prior_model,
        "candidate_model": instance.candidate_model,
        "skip_accuracy": instance.skip_accuracy,
        "adapt_accuracy": instance.adapt_accuracy,
        "ground_truth": instance.ground_truth,
        "features": {
            "mean_msp": instance.features.mean_msp,
            "mean_prototype_distance": instance.features.mean_prototype_distance,
            "zs_mean_msp": instance.features.zs_mean_msp,
            "zs_mean_prototype_distance": instance.features.zs_mean_prototype_distance,
        },
    }
