"""Interval chunking, sequence-safe class-balanced splits, crops.

A camera stream is cut into fixed 30-day windows starting at its first
timestamp. Windows below the minimum image count are merged forward into
their successor (the final window merges backward), so every emitted
interval meets the minimum unless the whole stream is below it.

Within an interval, classes with fewer than ``rare_threshold`` samples are
held out wholly as rare; the remaining classes are split into train/test at
sequence granularity, targeting an equal per-class test count (the quota),
so the test split is as class-balanced as burst atomicity allows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Sequence

import numpy as np

from .metadata import CameraStream, ImageRecord, parse_timestamp


class IntervalError(ValueError):
    """Interval construction or split failure."""


@dataclass
class Interval:
    """One chronological chunk of a camera stream."""

    index: int
    start: datetime
    end: datetime
    image_ids: list[str]
    class_histogram: dict[str, int]
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    rare_ids: list[str] = field(default_factory=list)
    usable: bool = True

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass
class ImbalanceSummary:
    top2_fraction: float
    least2_count: int
    degenerate: bool = False  # fewer than 2 classes


@dataclass
class IntervalBenchmark:
    """Per-camera benchmark: ordered intervals, splits, crops, labels."""

    camera_id: str
    intervals: list[Interval]
    vocabulary: list[str]
    crop_specs: dict[str, tuple[int, int, int, int]]
    labels: dict[str, str]
    sequences: dict[str, str]
    imbalance: ImbalanceSummary | None = None

    def interval_count(self) -> int:
        return len(self.intervals)


def chunk_intervals(
    stream: CameraStream,
    window: timedelta = timedelta(days=30),
    min_images: int = 200,
) -> list[Interval]:
    """Cut the stream into windows and merge undersized ones.

    Windows run from the first timestamp in fixed ``window`` steps. A window
    with fewer than ``min_images`` records is merged into its successor; if
    the final accumulated window is still undersized it merges backward into
    the previous interval. A stream entirely below the threshold yields one
    camera-wide interval.
    """
    if not stream.records:
        raise IntervalError(f"camera {stream.camera_id}: empty stream")

    t0 = stream.records[0].timestamp
    windows: list[list[ImageRecord]] = []
    bounds: list[tuple[datetime, datetime]] = []
    for record in stream.records:
        k = int((record.timestamp - t0) // window)
        while len(windows) <= k:
            start = t0 + window * len(windows)
            windows.append([])
            bounds.append((start, start + window))
        windows[k].append(record)

    merged: list[tuple[list[ImageRecord], datetime, datetime]] = []
    carry: list[ImageRecord] = []
    carry_start: datetime | None = None
    for recs, (start, end) in zip(windows, bounds):
        if carry_start is None:
            carry_start = start
        carry.extend(recs)
        if len(carry) >= min_images:
            merged.append((carry, carry_start, end))
            carry, carry_start = [], None
    if carry:
        if merged:
            prev, prev_start, _ = merged.pop()
            merged.append((prev + carry, prev_start, bounds[-1][1]))
        else:
            merged.append((carry, carry_start, bounds[-1][1]))

    intervals = []
    for j, (recs, start, end) in enumerate(merged):
        hist: dict[str, int] = {}
        for r in recs:
            hist[r.species] = hist.get(r.species, 0) + 1
        intervals.append(
            Interval(
                index=j,
                start=start,
                end=end,
                image_ids=[r.image_id for r in recs],
                class_histogram=dict(sorted(hist.items())),
            )
        )
    return intervals


def split_interval(
    interval: Interval,
    records: Mapping[str, ImageRecord],
    seed: int,
    rare_threshold: int = 10,
    test_fraction: float = 0.2,
    test_floor: int = 2,
) -> Interval:
    """Populate train/test/rare splits of one interval in place.

    Classes below ``rare_threshold`` go wholly to ``rare_ids``. The
    remaining classes are split at sequence granularity: the per-class test
    quota is the minimum over eligible classes of
    ``floor(test_fraction * count)``, floored at ``test_floor``, and each
    class fills its quota greedily with its smallest sequences (seed-shuffled
    before the stable size sort, so ties vary with the seed). All members of
    a sequence land in one split.
    """
    hist = interval.class_histogram
    rare_classes = {c for c, n in hist.items() if n < rare_threshold}
    eligible = [c for c in sorted(hist) if c not in rare_classes]

    rare_ids = [i for i in interval.image_ids if records[i].species in rare_classes]
    if not eligible:
        interval.train_ids, interval.test_ids, interval.rare_ids = [], [], rare_ids
        interval.usable = False
        raise IntervalError(
            f"interval {interval.index}: no class reaches {rare_threshold} samples"
        )

    quota = max(
        test_floor,
        min(math.floor(test_fraction * hist[c]) for c in eligible),
    )

    # Sequence units among non-rare records; a mixed sequence is assigned to
    # its most frequent class so that it is never split across train/test.
    sequences: dict[str, list[str]] = {}
    for image_id in interval.image_ids:
        record = records[image_id]
        if record.species in rare_classes:
            continue
        sequences.setdefault(record.sequence_id, []).append(image_id)

    per_class: dict[str, list[tuple[str, list[str]]]] = {c: [] for c in eligible}
    for seq_id, ids in sorted(sequences.items()):
        counts: dict[str, int] = {}
        for i in ids:
            counts[records[i].species] = counts.get(records[i].species, 0) + 1
        owner = max(sorted(counts), key=lambda c: counts[c])
        per_class[owner].append((seq_id, ids))

    rng = np.random.default_rng(seed)
    test_ids: list[str] = []
    train_ids: list[str] = []
    for cls in eligible:
        units = per_class[cls]
        order = rng.permutation(len(units))
        units = [units[i] for i in order]
        units.sort(key=lambda u: len(u[1]))  # stable: seed decides ties
        picked = 0
        for _, ids in units:
            if picked < quota:
                test_ids.extend(ids)
                picked += len(ids)
            else:
                train_ids.extend(ids)

    interval.train_ids = sorted(train_ids)
    interval.test_ids = sorted(test_ids)
    interval.rare_ids = sorted(rare_ids)
    interval.usable = True
    return interval


def crop_spec(record: ImageRecord) -> tuple[int, int, int, int]:
    """Integer crop rectangle covering the box enlarged 1.5x about its center.

    The enlarged real-valued box is covered pixel-inclusively: the origin is
    the floor of the low edge and the extent runs through the floor of the
    high edge, clamped to the image.
    """
    x, y, w, h = record.bbox
    if w <= 0 or h <= 0:
        raise IntervalError(f"record {record.image_id}: degenerate bbox {record.bbox}")
    width, height = record.image_size
    cx, cy = x + w / 2.0, y + h / 2.0
    half_w, half_h = 0.75 * w, 0.75 * h
    x0 = max(0, math.floor(cx - half_w))
    y0 = max(0, math.floor(cy - half_h))
    x1 = min(width - 1, math.floor(cx + half_w))
    y1 = min(height - 1, math.floor(cy + half_h))
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def imbalance_summary(intervals: Sequence[Interval]) -> ImbalanceSummary:
    """Camera-level imbalance metrics pooled over intervals."""
    pooled: dict[str, int] = {}
    for interval in intervals:
        for cls, n in interval.class_histogram.items():
            pooled[cls] = pooled.get(cls, 0) + n
    if not pooled:
        raise IntervalError("no class histogram available")
    counts = sorted(pooled.values(), reverse=True)
    total = sum(counts)
    top2 = sum(counts[:2])
    least2 = sum(counts[-2:]) if len(counts) >= 2 else counts[-1]
    return ImbalanceSummary(
        top2_fraction=top2 / total,
        least2_count=least2,
        degenerate=len(counts) < 2,
    )


def build_benchmark(
    stream: CameraStream,
    seed: int,
    window: timedelta = timedelta(days=30),
    min_images: int = 200,
    rare_threshold: int = 10,
    test_fraction: float = 0.2,
    test_floor: int = 2,
) -> IntervalBenchmark:
    """Run chunking, splitting, and crop computation for one camera.

    Intervals whose split fails (no eligible class) are kept but flagged
    unusable; runs skip them.
    """
    records = {r.image_id: r for r in stream.records}
    intervals = chunk_intervals(stream, window=window, min_images=min_images)
    for interval in intervals:
        try:
            split_interval(
                interval,
                records,
                seed=seed,
                rare_threshold=rare_threshold,
                test_fraction=test_fraction,
                test_floor=test_floor,
            )
        except IntervalError:
            pass  # flagged unusable by split_interval
    crops = {r.image_id: crop_spec(r) for r in stream.records}
    return IntervalBenchmark(
        camera_id=stream.camera_id,
        intervals=intervals,
        vocabulary=list(stream.species_vocabulary),
        crop_specs=crops,
        labels={r.image_id: r.species for r in stream.records},
        sequences={r.image_id: r.sequence_id for r in stream.records},
        imbalance=imbalance_summary(intervals),
    )


def benchmark_to_json(benchmark: IntervalBenchmark) -> dict:
    return {
        "camera_id": benchmark.camera_id,
        "vocabulary": benchmark.vocabulary,
        "intervals": [
            {
                "index": iv.index,
                "start": iv.start.isoformat(),
                "end": iv.end.isoformat(),
                "image_ids": iv.image_ids,
                "class_histogram": iv.class_histogram,
                "train_ids": iv.train_ids,
                "test_ids": iv.test_ids,
                "rare_ids": iv.rare_ids,
                "usable": iv.usable,
            }
            for iv in benchmark.intervals
        ],
        "crop_specs": {k: list(v) for k, v in sorted(benchmark.crop_specs.items())},
        "labels": dict(sorted(benchmark.labels.items())),
        "sequences": dict(sorted(benchmark.sequences.items())),
        "imbalance": None
        if benchmark.imbalance is None
        else {
            "top2_fraction": benchmark.imbalance.top2_fraction,
            "least2_count": benchmark.imbalance.least2_count,
            "degenerate": benchmark.imbalance.degenerate,
        },
    }


def benchmark_from_json(data: Mapping) -> IntervalBenchmark:
    intervals = [
        Interval(
            index=iv["index"],
            start=parse_timestamp(iv["start"]),
            end=parse_timestamp(iv["end"]),
            image_ids=list(iv["image_ids"]),
            class_histogram=dict(iv["class_histogram"]),
            train_ids=list(iv["train_ids"]),
            test_ids=list(iv["test_ids"]),
            rare_ids=list(iv["rare_ids"]),
            usable=bool(iv["usable"]),
        )
        for iv in data["intervals"]
    ]
    imb = data.get("imbalance")
    return IntervalBenchmark(
        camera_id=data["camera_id"],
        intervals=intervals,
        vocabulary=list(data["vocabulary"]),
        crop_specs={k: tuple(v) for k, v in data["crop_specs"].items()},
        labels=dict(data["labels"]),
        sequences=dict(data["sequences"]),
        imbalance=None
        if imb is None
        else ImbalanceSummary(imb["top2_fraction"], imb["least2_count"], imb["degenerate"]),
    )


def write_benchmark(benchmark: IntervalBenchmark, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(benchmark_to_json(benchmark), fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_benchmark(path) -> IntervalBenchmark:
    with open(path, "r", encoding="utf-8") as fh:
        return benchmark_from_json(json.load(fh))


def execute_crops(benchmark: IntervalBenchmark, image_root, out_dir) -> list[str]:
    """Write cropped patches ``<image_id>.jpg`` per the benchmark's crop specs.

    Source images are looked up as ``<image_root>/<image_id>.jpg``. Returns
    the ids whose source image was missing or unreadable. Requires Pillow.
    """
    from pathlib import Path

    from PIL import Image

    image_root = Path(image_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    missing = []
    for image_id, (x, y, w, h) in sorted(benchmark.crop_specs.items()):
        src = image_root / f"{image_id}.jpg"
        if not src.exists():
            missing.append(image_id)
            continue
        try:
            with Image.open(src) as img:
                patch = img.crop((x, y, x + w, y + h))
                patch.save(out_dir / f"{image_id}.jpg")
        except OSError:
            missing.append(image_id)
    return missing
