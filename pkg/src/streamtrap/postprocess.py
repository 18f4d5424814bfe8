"""Post-processing of adapted heads: calibration, interpolation, selection.

All three techniques are evaluated against a labeled probe (the next
interval's test split), so the reported gains are an oracle-style upper
bound: every report produced here carries ``oracle_hparam: true``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adapt import AdaptedHead, effective_weights, head_from_text, logits, predict
from .engine import RunResult, balanced_accuracy, evaluate_head, usable_intervals
from .intervals import IntervalBenchmark
from .store import DimensionMismatchError, EmbeddingMatrix, TextHead

DEFAULT_GAMMA_GRID = tuple(round(0.1 * i, 1) for i in range(11))  # 0.0 .. 1.0
DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
MINORITY_THRESHOLD = 10  # cumulative training count below which a class is boosted


@dataclass(frozen=True)
class CalibrationSpec:
    """Additive logit boost gamma for the target class set."""

    gamma: float
    target_set: frozenset

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


def absent_minority_classes(
    head: AdaptedHead, threshold: int = MINORITY_THRESHOLD
) -> frozenset:
    """Classes absent from training or below the minority threshold."""
    return frozenset(
        label for label in head.labels if head.class_counts.get(label, 0) < threshold
    )


def calibrated_logits(
    head: AdaptedHead, embeddings: np.ndarray, spec: CalibrationSpec
) -> np.ndarray:
    unknown = spec.target_set - set(head.labels)
    if unknown:
        raise ValueError(f"target classes not in head vocabulary: {sorted(unknown)}")
    scores = np.atleast_2d(logits(head, embeddings)).copy()
    boost = np.array([spec.gamma if l in spec.target_set else 0.0 for l in head.labels])
    return scores + boost[None, :]


def calibrate_predict(
    head: AdaptedHead, embedding: np.ndarray, spec: CalibrationSpec
) -> str:
    """Argmax of boosted logits; ties break toward the lowest label index."""
    scores = calibrated_logits(head, embedding, spec)
    return head.labels[int(np.argmax(scores[0]))]


def interpolate_heads(
    pretrained: AdaptedHead, finetuned: AdaptedHead, alpha: float
) -> AdaptedHead:
    """Convex combination alpha*pretrained + (1-alpha)*finetuned.

    Adapters are materialized into effective weight matrices before mixing,
    so the result is always a plain head.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if pretrained.labels != finetuned.labels:
        raise ValueError("heads have different vocabularies")
    w_pre = effective_weights(pretrained)
    w_fin = effective_weights(finetuned)
    if w_pre.shape != w_fin.shape:
        raise DimensionMismatchError(f"shape {w_pre.shape} vs {w_fin.shape}")
    if alpha == 1.0:
        mixed = w_pre
    elif alpha == 0.0:
        mixed = w_fin
    else:
        mixed = alpha * w_pre + (1.0 - alpha) * w_fin
    return AdaptedHead(
        labels=list(finetuned.labels),
        base_weights=mixed,
        loss_kind=finetuned.loss_kind,
        class_counts=dict(finetuned.class_counts),
        provenance=finetuned.provenance,
    )


def select_interval_model(
    checkpoints: Sequence[AdaptedHead],
    probe: tuple[np.ndarray, Sequence[str]],
) -> tuple[int, float]:
    """Checkpoint with the highest balanced accuracy on the labeled probe.

    Ties go to the most recent checkpoint. This is a diagnostic that peeks
    at future labels; reports flag it accordingly.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    probe_z, probe_labels = probe
    if len(probe_labels) == 0:
        raise ValueError("empty probe")
    best_idx, best_acc = 0, -1.0
    for idx, head in enumerate(checkpoints):
        pairs = list(zip(probe_labels, predict(head, probe_z)))
        acc = balanced_accuracy(pairs)
        if acc >= best_acc:  # >= : later checkpoint wins ties
            best_idx, best_acc = idx, acc
    return best_idx, best_acc


@dataclass
class TechniqueGain:
    setting: float | int | None
    accuracy: float
    gain: float


@dataclass
class IntervalGains:
    interval: int
    baseline: float
    calibration: TechniqueGain
    interpolation: TechniqueGain
    selection: TechniqueGain

    def best(self) -> TechniqueGain:
        return max(
            (self.calibration, self.interpolation, self.selection),
            key=lambda t: t.accuracy,
        )


@dataclass
class GainsReport:
    camera_id: str
    oracle_hparam: bool
    per_interval: list[IntervalGains]

    def mean_gains(self) -> dict[str, float]:
        if not self.per_interval:
            return {}
        return {
            "calibration": float(np.mean([g.calibration.gain for g in self.per_interval])),
            "interpolation": float(np.mean([g.interpolation.gain for g in self.per_interval])),
            "selection": float(np.mean([g.selection.gain for g in self.per_interval])),
            "best_of_three": float(np.mean([g.best().gain for g in self.per_interval])),
        }


def sweep_hyperparameters(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    text_head: TextHead,
    run: RunResult,
    gammas: Sequence[float] = DEFAULT_GAMMA_GRID,
    alphas: Sequence[float] = DEFAULT_ALPHA_GRID,
) -> GainsReport:
    """Best-grid gain of each technique over a completed accumulated run.

    For the step that evaluated interval j+1 with checkpoint j, each
    technique is scored on that interval's test split (the probe) across its
    grid, and the maximum accuracy is compared with the run's baseline.
    Grids that include the identity settings give nonnegative gains.
    """
    if not list(gammas) or not list(alphas):
        raise ValueError("empty hyperparameter grid")
    if not run.checkpoints:
        raise ValueError("run retained no checkpoints")
    intervals = usable_intervals(benchmark)
    by_index = {iv.index: iv for iv in intervals}
    zs_head = head_from_text(text_head)
    per_interval: list[IntervalGains] = []

    for step, score in enumerate(run.per_interval):
        head = run.checkpoints[min(step, len(run.checkpoints) - 1)]
        target = by_index[score.interval]
        probe_ids = list(target.test_ids)
        probe_z = store.rows(probe_ids)
        probe_labels = [benchmark.labels[i] for i in probe_ids]
        baseline = score.balanced_accuracy

        target_set = absent_minority_classes(head)
        best_gamma, best_gamma_acc = None, -1.0
        for gamma in gammas:
            spec = CalibrationSpec(gamma=gamma, target_set=target_set)
            scores_matrix = calibrated_logits(head, probe_z, spec)
            pred = [head.labels[i] for i in np.argmax(scores_matrix, axis=1)]
            acc = balanced_accuracy(list(zip(probe_labels, pred)))
            if acc > best_gamma_acc:
                best_gamma, best_gamma_acc = gamma, acc

        best_alpha, best_alpha_acc = None, -1.0
        for alpha in alphas:
            mixed = interpolate_heads(zs_head, head, alpha)
            pairs = list(zip(probe_labels, predict(mixed, probe_z)))
            acc = balanced_accuracy(pairs)
            if acc > best_alpha_acc:
                best_alpha, best_alpha_acc = alpha, acc

        sel_idx, sel_acc = select_interval_model(
            run.checkpoints[: step + 1], (probe_z, probe_labels)
        )

        per_interval.append(
            IntervalGains(
                interval=score.interval,
                baseline=baseline,
                calibration=TechniqueGain(best_gamma, best_gamma_acc, best_gamma_acc - baseline),
                interpolation=TechniqueGain(best_alpha, best_alpha_acc, best_alpha_acc - baseline),
                selection=TechniqueGain(sel_idx, sel_acc, sel_acc - baseline),
            )
        )

    return GainsReport(camera_id=benchmark.camera_id, oracle_hparam=True, per_interval=per_interval)


def gains_to_json(report: GainsReport) -> dict:
    def tech(t: TechniqueGain) -> dict:
        return {"setting": t.setting, "accuracy": t.accuracy, "gain": t.gain}

    return {
        "camera_id": report.camera_id,
        "oracle_hparam": report.oracle_hparam,
        "per_interval": [
            {
                "interval": g.interval,
                "baseline": g.baseline,
                "calibration": tech(g.calibration),
                "interpolation": tech(g.interpolation),
                "selection": tech(g.selection),
                "best_of_three": tech(g.best()),
            }
            for g in report.per_interval
        ],
        "mean_gains": report.mean_gains(),
    }
