"""Seeded synthetic cameras: Gaussian class clusters on the unit sphere.

Each class is a unit-vector center in R^d; image embeddings are noisy,
renormalized samples around their class center, and the text head is a
perturbed copy of the centers, so the zero-shot head is informative but
imperfect and training has room to help. Records come with burst
sequences and timestamps laid out in 30-day windows, and the benchmark is
produced by the real chunk/split pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from .intervals import IntervalBenchmark, build_benchmark
from .metadata import CameraStream, ImageRecord
from .store import EmbeddingMatrix, TextHead

SPECIES_POOL = (
    "white-tailed deer",
    "red fox",
    "wild boar",
    "coyote",
    "raccoon",
    "gray wolf",
    "elk",
    "moose",
    "bobcat",
    "black bear",
    "snowshoe hare",
    "striped skunk",
)


@dataclass
class SyntheticCamera:
    camera_id: str
    stream: CameraStream
    benchmark: IntervalBenchmark
    store: EmbeddingMatrix
    text_head: TextHead
    centers: np.ndarray


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def stationary_probs(n_intervals: int, weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    return np.tile(w / w.sum(), (n_intervals, 1))


def alternating_probs(
    n_intervals: int, n_classes: int, major: float = 0.9
) -> np.ndarray:
    """Class support flips between the two halves of the vocabulary each
    interval, giving a per-step L1 shift close to 2*major."""
    half = n_classes // 2
    probs = np.zeros((n_intervals, n_classes))
    for i in range(n_intervals):
        first = i % 2 == 0
        lead = list(range(half)) if first else list(range(half, n_classes))
        tail = list(range(half, n_classes)) if first else list(range(half))
        for c in lead:
            probs[i, c] = major / len(lead)
        for c in tail:
            probs[i, c] = (1 - major) / len(tail)
    return probs / probs.sum(axis=1, keepdims=True)


def make_synthetic_camera(
    camera_id: str = "cam-00",
    n_classes: int = 5,
    dim: int = 16,
    n_intervals: int = 6,
    images_per_interval: int = 300,
    class_probs: np.ndarray | Sequence[float] | None = None,
    noise: float = 0.45,
    head_noise: float = 0.55,
    center_drift: float = 0.0,
    seed: int = 0,
    start: datetime | None = None,
    min_interval_images: int = 50,
    rare_threshold: int = 10,
    test_fraction: float = 0.2,
) -> SyntheticCamera:
    if n_classes > len(SPECIES_POOL):
        raise ValueError(f"at most {len(SPECIES_POOL)} synthetic classes")
    rng = np.random.default_rng(seed)
    labels = list(SPECIES_POOL[:n_classes])
    start = start or datetime(2021, 1, 1, tzinfo=timezone.utc)

    if class_probs is None:
        probs = stationary_probs(n_intervals, np.ones(n_classes))
    else:
        probs = np.asarray(class_probs, dtype=np.float64)
        if probs.ndim == 1:
            probs = stationary_probs(n_intervals, probs)
    if probs.shape != (n_intervals, n_classes):
        raise ValueError(f"class_probs shape {probs.shape} != ({n_intervals}, {n_classes})")

    centers = _unit(rng.normal(size=(n_classes, dim)))
    text_vectors = _unit(centers + head_noise * rng.normal(size=(n_classes, dim)))

    # appearance drift: class centers take a random walk over intervals
    interval_centers = [centers]
    for _ in range(1, n_intervals):
        step = center_drift * rng.normal(size=(n_classes, dim))
        interval_centers.append(_unit(interval_centers[-1] + step))

    window = timedelta(days=30)
    records: list[ImageRecord] = []
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seq_counter = 0
    img_counter = 0
    for i in range(n_intervals):
        counts = rng.multinomial(images_per_interval, probs[i])
        window_start = start + i * window
        usable_seconds = int(window.total_seconds()) - 7200  # keep off the edges
        bursts: list[tuple[int, int]] = []  # (class, length)
        for c, n in enumerate(counts):
            remaining = int(n)
            while remaining > 0:
                length = int(min(remaining, rng.integers(1, 4)))
                bursts.append((c, length))
                remaining -= length
        offsets = np.sort(rng.integers(3600, usable_seconds, size=len(bursts)))
        order = rng.permutation(len(bursts))
        for burst_idx, (c, length) in enumerate((bursts[k] for k in order)):
            base = window_start + timedelta(seconds=int(offsets[burst_idx]))
            seq_id = f"{camera_id}-seq{seq_counter:06d}"
            seq_counter += 1
            for frame in range(length):
                image_id = f"{camera_id}-img{img_counter:06d}"
                img_counter += 1
                records.append(
                    ImageRecord(
                        image_id=image_id,
                        camera_id=camera_id,
                        timestamp=base + timedelta(seconds=frame),
                        sequence_id=seq_id,
                        frame_index=frame,
                        species=labels[c],
                        bbox=(10.0, 10.0, 50.0, 50.0),
                        bbox_confidence=0.95,
                        image_size=(640, 480),
                    )
                )
                ids.append(image_id)
                rows.append(interval_centers[i][c] + noise * rng.normal(size=dim))

    ordered = sorted(range(len(records)), key=lambda k: (records[k].timestamp, records[k].image_id))
    records = [records[k] for k in ordered]
    ids = [ids[k] for k in ordered]
    data = _unit(np.stack([rows[k] for k in ordered])).astype(np.float32)

    stream = CameraStream(
        camera_id=camera_id,
        records=tuple(records),
        species_vocabulary=tuple(sorted({r.species for r in records})),
    )
    benchmark = build_benchmark(
        stream,
        seed=seed,
        window=window,
        min_images=min_interval_images,
        rare_threshold=rare_threshold,
        test_fraction=test_fraction,
    )
    # head vocabulary must cover the stream's, in benchmark vocabulary order
    vocab = benchmark.vocabulary
    head = TextHead(
        labels=list(vocab),
        vectors=np.stack([text_vectors[labels.index(v)] for v in vocab]).astype(np.float32),
    )
    store = EmbeddingMatrix(ids=ids, data=data, normalized=True)
    return SyntheticCamera(
        camera_id=camera_id,
        stream=stream,
        benchmark=benchmark,
        store=store,
        text_head=head,
        centers=centers,
    )


def make_fleet(
    n_cameras: int,
    seed: int = 0,
    **kwargs,
) -> list[SyntheticCamera]:
    """Independent synthetic cameras with derived seeds."""
    return [
        make_synthetic_camera(camera_id=f"cam-{k:02d}", seed=seed + 1000 * k, **kwargs)
        for k in range(n_cameras)
    ]


def dataset_document(cameras: Sequence[SyntheticCamera]) -> dict:
    """Raw metadata document (images/annotations/categories/detections)
    equivalent to the given cameras, for exercising the parse pipeline."""
    categories: dict[str, int] = {}
    images, annotations, detections = [], [], []
    for cam in cameras:
        for record in cam.stream.records:
            if record.species not in categories:
                categories[record.species] = len(categories) + 1
            images.append(
                {
                    "id": record.image_id,
                    "file_name": f"{record.image_id}.jpg",
                    "datetime": record.timestamp.strftime("%Y-%m-%d %H:%M:%S"),
                    "seq_id": record.sequence_id,
                    "frame_num": record.frame_index,
                    "width": record.image_size[0],
                    "height": record.image_size[1],
                    "location": record.camera_id,
                }
            )
            annotations.append(
                {"image_id": record.image_id, "category": categories[record.species]}
            )
            detections.append(
                {
                    "image_id": record.image_id,
                    "bbox": list(record.bbox),
                    "conf": record.bbox_confidence,
                }
            )
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i, "name": name} for name, i in categories.items()],
        "detections": detections,
    }
