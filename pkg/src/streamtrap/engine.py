"""Streaming evaluation regimes over an interval benchmark.

The protocol walks a camera's usable intervals in order. At step j the
accumulated regime trains a head on the union of train splits 0..j
(validated on the test split of the previous interval) and evaluates it on
the test split of interval j+1, so a head is never scored on data that
influenced it. The oracle regime trains once on all train splits and
evaluates everywhere; frozen regimes stop the accumulated updates after a
fraction of the steps and reuse the last head for the remaining intervals.

Every evaluation is recorded in a causality ledger (train ids, validation
ids, evaluated test ids) and checked for overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adapt import (
    AdaptedHead,
    Provenance,
    TrainConfig,
    head_from_text,
    make_validation,
    predict,
    train_head,
)
from .intervals import Interval, IntervalBenchmark
from .store import EmbeddingMatrix, TextHead

REGIME_ZERO_SHOT = "zero_shot"
REGIME_ACCUMULATED = "accumulated"
REGIME_ORACLE = "oracle"


class MissingEmbeddingError(ValueError):
    def __init__(self, ids: Sequence[str]):
        self.ids = list(ids)
        preview = ", ".join(self.ids[:10])
        more = "" if len(self.ids) <= 10 else f" (+{len(self.ids) - 10} more)"
        super().__init__(f"no embeddings for {len(self.ids)} ids: {preview}{more}")


class CausalityError(RuntimeError):
    """An id used for training/validation appeared in an evaluated test set."""


class ProtocolError(ValueError):
    """Benchmark unsuitable for the requested regime."""


@dataclass
class RunSettings:
    """Engine-level knobs on top of the optimizer config."""

    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "linear_full"
    loss: str = "ce"
    validation: str = "accumulated"  # or "oracle" (2 held-out images/class)
    warm_start: bool = False
    include_rare_in_test: bool = False


@dataclass
class IntervalScore:
    interval: int
    balanced_accuracy: float
    per_class: dict[str, float]
    n_test: int


@dataclass
class LedgerEntry:
    step: int
    train_ids: frozenset
    val_ids: frozenset
    test_ids: frozenset


@dataclass
class RunResult:
    camera_id: str
    regime: str
    per_interval: list[IntervalScore]
    aggregate: float
    head_checkpoints: list[Provenance]
    checkpoints: list[AdaptedHead] = field(default_factory=list)
    ledger: list[LedgerEntry] = field(default_factory=list)
    zero_shot_interval0: IntervalScore | None = None


def balanced_accuracy(
    predictions: Sequence[tuple[str, str]],
    vocabulary: Sequence[str] | None = None,
) -> float:
    """Mean per-class recall over the classes present in the true labels."""
    if not predictions:
        raise ValueError("no predictions to score")
    if vocabulary is not None:
        vocab = set(vocabulary)
        for true, _ in predictions:
            if true not in vocab:
                raise ValueError(f"label {true!r} outside vocabulary")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for true, pred in predictions:
        totals[true] = totals.get(true, 0) + 1
        if true == pred:
            hits[true] = hits.get(true, 0) + 1
    recalls = [hits.get(cls, 0) / n for cls, n in totals.items()]
    return float(sum(recalls) / len(recalls))


def per_class_accuracy(predictions: Sequence[tuple[str, str]]) -> dict[str, float]:
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for true, pred in predictions:
        totals[true] = totals.get(true, 0) + 1
        if true == pred:
            hits[true] = hits.get(true, 0) + 1
    return {cls: hits.get(cls, 0) / n for cls, n in sorted(totals.items())}


def evaluate_head(
    head: AdaptedHead,
    store: EmbeddingMatrix,
    ids: Sequence[str],
    labels: dict[str, str],
    interval_index: int,
) -> IntervalScore:
    """Score one head on one id list."""
    z = store.rows(ids)
    pairs = list(zip((labels[i] for i in ids), predict(head, z)))
    return IntervalScore(
        interval=interval_index,
        balanced_accuracy=balanced_accuracy(pairs),
        per_class=per_class_accuracy(pairs),
        n_test=len(ids),
    )


def usable_intervals(benchmark: IntervalBenchmark) -> list[Interval]:
    return [iv for iv in benchmark.intervals if iv.usable]


def _test_ids(interval: Interval, settings: RunSettings) -> list[str]:
    ids = list(interval.test_ids)
    if settings.include_rare_in_test:
        ids += list(interval.rare_ids)
    return ids


def _require_embeddings(
    benchmark: IntervalBenchmark, store: EmbeddingMatrix, settings: RunSettings
) -> None:
    needed: list[str] = []
    for interval in usable_intervals(benchmark):
        needed += interval.train_ids
        needed += _test_ids(interval, settings)
    missing = store.missing(needed)
    if missing:
        raise MissingEmbeddingError(sorted(set(missing)))


def _ledger_check(
    ledger: list[LedgerEntry], step: int, train_ids, val_ids, test_ids
) -> None:
    entry = LedgerEntry(
        step=step,
        train_ids=frozenset(train_ids),
        val_ids=frozenset(val_ids),
        test_ids=frozenset(test_ids),
    )
    overlap = (entry.train_ids | entry.val_ids) & entry.test_ids
    if overlap:
        raise CausalityError(
            f"step {step}: {len(overlap)} ids are in both training and the "
            f"evaluated test split, e.g. {sorted(overlap)[:5]}"
        )
    ledger.append(entry)


def run_zero_shot(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    text_head: TextHead,
    settings: RunSettings | None = None,
) -> RunResult:
    """Evaluate the untrained text head on every usable interval's test split."""
    settings = settings or RunSettings()
    _require_embeddings(benchmark, store, settings)
    head = head_from_text(text_head)
    ledger: list[LedgerEntry] = []
    scores = []
    for interval in usable_intervals(benchmark):
        ids = _test_ids(interval, settings)
        _ledger_check(ledger, interval.index, [], [], ids)
        scores.append(evaluate_head(head, store, ids, benchmark.labels, interval.index))
    if not scores:
        raise ProtocolError(f"camera {benchmark.camera_id}: no usable intervals")
    return RunResult(
        camera_id=benchmark.camera_id,
        regime=REGIME_ZERO_SHOT,
        per_interval=scores,
        aggregate=float(np.mean([s.balanced_accuracy for s in scores])),
        head_checkpoints=[],
        ledger=ledger,
    )


def _train_step(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    text_head: TextHead,
    settings: RunSettings,
    intervals: list[Interval],
    step: int,
    cumulative_train: list[str],
    previous: AdaptedHead | None,
) -> tuple[AdaptedHead, list[str], list[str]]:
    """Train the accumulated head for one step; returns (head, train, val)."""
    if settings.validation == "oracle":
        seen = set(cumulative_train)
        val_ids = [
            i
            for i in make_validation(True, benchmark, seed=settings.train.seed)
            if i in seen
        ]
        held = set(val_ids)
        train_ids = [i for i in cumulative_train if i not in held]
    else:
        val_ids = list(intervals[step - 1].test_ids) if step >= 1 else []
        train_ids = list(cumulative_train)
    init = previous if (settings.warm_start and previous is not None) else text_head
    head = train_head(
        (store.rows(train_ids), [benchmark.labels[i] for i in train_ids]),
        (store.rows(val_ids), [benchmark.labels[i] for i in val_ids]) if val_ids else None,
        init,
        settings.train,
        mode=settings.mode,
        loss=settings.loss,
        provenance=Provenance(
            camera_id=benchmark.camera_id,
            trained_through_interval=intervals[step].index,
            seed=settings.train.seed,
        ),
    )
    return head, train_ids, val_ids


def run_accumulated(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    text_head: TextHead,
    settings: RunSettings | None = None,
) -> RunResult:
    """Streaming protocol: train on intervals 0..j, evaluate on test(j+1).

    Interval 0's test split has no prior training data; it is scored by the
    zero-shot head and reported separately (``zero_shot_interval0``), not in
    the aggregate.
    """
    settings = settings or RunSettings()
    _require_embeddings(benchmark, store, settings)
    intervals = usable_intervals(benchmark)
    if len(intervals) < 2:
        raise ProtocolError(
            f"camera {benchmark.camera_id}: accumulated regime needs >= 2 usable intervals"
        )

    ledger: list[LedgerEntry] = []
    zs_head = head_from_text(text_head)
    first_test = _test_ids(intervals[0], settings)
    _ledger_check(ledger, intervals[0].index, [], [], first_test)
    zs0 = evaluate_head(zs_head, store, first_test, benchmark.labels, intervals[0].index)

    scores: list[IntervalScore] = []
    checkpoints: list[AdaptedHead] = []
    cumulative: list[str] = []
    previous: AdaptedHead | None = None
    for j in range(len(intervals) - 1):
        cumulative += list(intervals[j].train_ids)
        head, train_ids, val_ids = _train_step(
            benchmark, store, text_head, settings, intervals, j, cumulative, previous
        )
        checkpoints.append(head)
        previous = head
        target = intervals[j + 1]
        ids = _test_ids(target, settings)
        _ledger_check(ledger, target.index, train_ids, val_ids, ids)
        scores.append(evaluate_head(head, store, ids, benchmark.labels, target.index))

    return RunResult(
        camera_id=benchmark.camera_id,
        regime=REGIME_ACCUMULATED,
        per_interval=scores,
        aggregate=float(np.mean([s.balanced_accuracy for s in scores])),
        head_checkpoints=[h.provenance for h in checkpoints],
        checkpoints=checkpoints,
        ledger=ledger,
        zero_shot_interval0=zs0,
    )


def run_oracle(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    text_head: TextHead,
    settings: RunSettings | None = None,
) -> RunResult:
    """Upper bound: one head trained on every interval's train split."""
    settings = settings or RunSettings()
    _require_embeddings(benchmark, store, settings)
    intervals = usable_intervals(benchmark)
    if not intervals:
        raise ProtocolError(f"camera {benchmark.camera_id}: no usable intervals")

    all_train: list[str] = []
    for interval in intervals:
        all_train += list(interval.train_ids)
    val_ids = make_validation(True, benchmark, seed=settings.train.seed)
    val_set = set(val_ids)
    train_ids = [i for i in all_train if i not in val_set]

    head = train_head(
        (store.rows(train_ids), [benchmark.labels[i] for i in train_ids]),
        (store.rows(val_ids), [benchmark.labels[i] for i in val_ids]) if val_ids else None,
        text_head,
        settings.train,
        mode=settings.mode,
        loss=settings.loss,
        provenance=Provenance(
            camera_id=benchmark.camera_id,
            trained_through_interval=intervals[-1].index,
            seed=settings.train.seed,
        ),
    )

    ledger: list[LedgerEntry] = []
    scores = []
    for interval in intervals:
        ids = _test_ids(interval, settings)
        _ledger_check(ledger, interval.index, train_ids, val_ids, ids)
        scores.append(evaluate_head(head, store, ids, benchmark.labels, interval.index))

    return RunResult(
        camera_id=benchmark.camera_id,
        regime=REGIME_ORACLE,
        per_interval=scores,
        aggregate=float(np.mean([s.balanced_accuracy for s in scores])),
        head_checkpoints=[head.provenance],
        checkpoints=[head],
        ledger=ledger,
    )


def run_frozen(
    benchmark: IntervalBenchmark,
    store: EmbeddingMatrix,
    text_head: TextHead,
    settings: RunSettings | None = None,
    freeze_fraction: float = 1.0,
) -> RunResult:
    """Accumulated run whose updates stop after a fraction of the steps.

    With m usable intervals there are m-1 update steps; k = floor(fraction
    * (m-1)) of them are performed. Intervals 1..m-1 are all evaluated: the
    first k by the usual accumulated heads, the rest by the last trained
    head (or by the zero-shot head when k = 0).
    """
    settings = settings or RunSettings()
    if not (0.0 <= freeze_fraction <= 1.0):
        raise ProtocolError(f"freeze_fraction {freeze_fraction} outside [0, 1]")
    _require_embeddings(benchmark, store, settings)
    intervals = usable_intervals(benchmark)
    if len(intervals) < 2:
        raise ProtocolError(
            f"camera {benchmark.camera_id}: frozen regime needs >= 2 usable intervals"
        )

    m = len(intervals)
    k = int(np.floor(freeze_fraction * (m - 1)))
    ledger: list[LedgerEntry] = []
    checkpoints: list[AdaptedHead] = []
    train_used: list[list[str]] = []
    val_used: list[list[str]] = []
    cumulative: list[str] = []
    previous: AdaptedHead | None = None
    for j in range(k):
        cumulative += list(intervals[j].train_ids)
        head, train_ids, val_ids = _train_step(
            benchmark, store, text_head, settings, intervals, j, cumulative, previous
        )
        checkpoints.append(head)
        train_used.append(train_ids)
        val_used.append(val_ids)
        previous = head

    zs_head = head_from_text(text_head)
    scores = []
    for i in range(1, m):
        step = min(i - 1, k - 1)
        if k == 0:
            head, train_ids, val_ids = zs_head, [], []
        else:
            head, train_ids, val_ids = checkpoints[step], train_used[step], val_used[step]
        target = intervals[i]
        ids = _test_ids(target, settings)
        _ledger_check(ledger, target.index, train_ids, val_ids, ids)
        scores.append(evaluate_head(head, store, ids, benchmark.labels, target.index))

    return RunResult(
        camera_id=benchmark.camera_id,
        regime=f"frozen_at_{k}",
        per_interval=scores,
        aggregate=float(np.mean([s.balanced_accuracy for s in scores])),
        head_checkpoints=[h.provenance for h in checkpoints],
        checkpoints=checkpoints,
        ledger=ledger,
    )


def result_rows(result: RunResult, config_hash: str = "", seed: int | None = None) -> list[dict]:
    """One JSON-ready row per camera x interval, for results JSONL files."""
    rows = []
    for score in result.per_interval:
        rows.append(
            {
                "camera_id": result.camera_id,
                "regime": result.regime,
                "interval": score.interval,
                "balanced_accuracy": score.balanced_accuracy,
                "per_class": score.per_class,
                "n_test": score.n_test,
                "aggregate": result.aggregate,
                "config_hash": config_hash,
                "seed": seed,
            }
        )
    return rows
