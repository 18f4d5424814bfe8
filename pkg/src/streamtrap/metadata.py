"""Camera-trap metadata parsing and per-camera chronological streams.

Input is a COCO-camera-trap style JSON document with four top-level lists:
``images`` (id, file_name, datetime, seq_id optional, width, height, plus a
``location``/``camera_id`` field naming the camera), ``annotations``
(image_id, category), ``categories`` (id, name) and ``detections``
(image_id, bbox [x, y, w, h] in absolute pixels, conf).

Parsing applies the image-level filters (single species, no excluded taxa,
detection confidence above threshold) and produces one immutable
:class:`CameraStream` per camera, sorted chronologically. Every dropped
record is counted under a stable reason key so the pipeline can emit a
drop report.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Iterable, Mapping, Sequence


class MetadataError(ValueError):
    """Malformed or inconsistent metadata document."""


# Drop-reason keys, used in drop reports and tests.
DROP_MISSING_TIMESTAMP = "missing_timestamp"
DROP_MISSING_LABEL = "missing_label"
DROP_MULTI_SPECIES = "multiple_species"
DROP_EXCLUDED_LABEL = "excluded_label"
DROP_NO_DETECTION = "no_detection"
DROP_LOW_CONFIDENCE = "low_confidence"
DROP_BAD_BBOX = "bad_bbox"
DROP_MISSING_CAMERA = "missing_camera"

DEFAULT_EXCLUDED_LABELS = ("human", "person", "vehicle", "car", "empty")


@dataclass(frozen=True)
class FilterConfig:
    """Image-level filter settings for :func:`parse_metadata`."""

    confidence_threshold: float = 0.8
    excluded_labels: tuple[str, ...] = DEFAULT_EXCLUDED_LABELS


@dataclass(frozen=True)
class ImageRecord:
    """One captured image after filtering.

    ``bbox`` is (x, y, w, h) in pixels, already clamped to the image;
    ``species`` is a lowercase trimmed common name.
    """

    image_id: str
    camera_id: str
    timestamp: datetime
    sequence_id: str
    frame_index: int
    species: str
    bbox: tuple[float, float, float, float]
    bbox_confidence: float
    image_size: tuple[int, int]


@dataclass(frozen=True)
class CameraStream:
    """Chronologically sorted records of one camera plus its vocabulary."""

    camera_id: str
    records: tuple[ImageRecord, ...]
    species_vocabulary: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.records)

    def span(self) -> timedelta:
        if not self.records:
            return timedelta(0)
        return self.records[-1].timestamp - self.records[0].timestamp


@dataclass
class ParsedDataset:
    """Streams plus drop counts returned by :func:`parse_metadata`."""

    streams: list[CameraStream]
    drops: Counter = field(default_factory=Counter)


_TIMESTAMP_FORMATS = (
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y:%m:%d %H:%M:%S",  # EXIF-style
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d",
)


def parse_timestamp(value) -> datetime | None:
    """Parse a metadata timestamp; naive values are treated as UTC."""
    if value is None:
        return None
    if isinstance(value, datetime):
        ts = value
    else:
        text = str(value).strip()
        if not text:
            return None
        ts = None
        try:
            ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
        except ValueError:
            for fmt in _TIMESTAMP_FORMATS:
                try:
                    ts = datetime.strptime(text, fmt)
                    break
                except ValueError:
                    continue
        if ts is None:
            return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def normalize_label(label) -> str:
    return str(label).strip().lower()


def clamp_bbox(
    bbox: Sequence[float], image_size: tuple[int, int]
) -> tuple[float, float, float, float] | None:
    """Clamp a pixel bbox to image bounds; None if nothing remains."""
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        return None
    width, height = image_size
    x0 = min(max(x, 0.0), float(width))
    y0 = min(max(y, 0.0), float(height))
    x1 = min(max(x + w, 0.0), float(width))
    y1 = min(max(y + h, 0.0), float(height))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def _camera_of(image: Mapping) -> str | None:
    for key in ("location", "camera_id", "camera"):
        value = image.get(key)
        if value is not None and str(value) != "":
            return str(value)
    return None


def parse_metadata(document, config: FilterConfig | None = None) -> ParsedDataset:
    """Parse a metadata document into per-camera streams.

    ``document`` may be a dict, a JSON string, or a path to a JSON file.
    Records failing any filter are dropped and counted in the result's
    ``drops`` counter. Raises :class:`MetadataError` on malformed input or
    duplicate image ids.
    """
    config = config or FilterConfig()
    doc = _load_document(document)
    for key in ("images", "annotations", "categories", "detections"):
        if key not in doc or not isinstance(doc[key], list):
            raise MetadataError(f"document is missing the '{key}' list")

    categories = {}
    for cat in doc["categories"]:
        categories[cat["id"]] = normalize_label(cat["name"])

    labels_per_image: dict[str, set[str]] = defaultdict(set)
    for idx, ann in enumerate(doc["annotations"]):
        try:
            image_id = str(ann["image_id"])
            cat_id = ann["category"] if "category" in ann else ann["category_id"]
        except KeyError as exc:
            raise MetadataError(f"annotation #{idx} is missing {exc}") from exc
        if cat_id not in categories:
            raise MetadataError(f"annotation #{idx} references unknown category {cat_id!r}")
        labels_per_image[image_id].add(categories[cat_id])

    detections_per_image: dict[str, list] = defaultdict(list)
    for idx, det in enumerate(doc["detections"]):
        try:
            detections_per_image[str(det["image_id"])].append((det["bbox"], float(det["conf"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MetadataError(f"detection #{idx} is malformed: {exc}") from exc

    drops: Counter = Counter()
    per_camera: dict[str, list[ImageRecord]] = defaultdict(list)
    seen_ids: set[str] = set()
    excluded = {normalize_label(l) for l in config.excluded_labels}

    for idx, image in enumerate(doc["images"]):
        if "id" not in image:
            raise MetadataError(f"image #{idx} has no id")
        image_id = str(image["id"])
        if image_id in seen_ids:
            raise MetadataError(f"duplicate image_id {image_id!r}")
        seen_ids.add(image_id)

        camera_id = _camera_of(image)
        if camera_id is None:
            drops[DROP_MISSING_CAMERA] += 1
            continue
        timestamp = parse_timestamp(image.get("datetime"))
        if timestamp is None:
            drops[DROP_MISSING_TIMESTAMP] += 1
            continue

        labels = labels_per_image.get(image_id, set())
        if not labels:
            drops[DROP_MISSING_LABEL] += 1
            continue
        if len(labels) > 1:
            drops[DROP_MULTI_SPECIES] += 1
            continue
        species = next(iter(labels))
        if species in excluded:
            drops[DROP_EXCLUDED_LABEL] += 1
            continue

        dets = detections_per_image.get(image_id, [])
        if not dets:
            drops[DROP_NO_DETECTION] += 1
            continue
        confident = [(b, c) for b, c in dets if c > config.confidence_threshold]
        if not confident:
            drops[DROP_LOW_CONFIDENCE] += 1
            continue
        bbox_raw, conf = max(confident, key=lambda bc: bc[1])

        try:
            image_size = (int(image["width"]), int(image["height"]))
        except (KeyError, TypeError, ValueError):
            drops[DROP_BAD_BBOX] += 1
            continue
        bbox = clamp_bbox(bbox_raw, image_size)
        if bbox is None or not (0.0 <= conf <= 1.0):
            drops[DROP_BAD_BBOX] += 1
            continue

        seq_id = image.get("seq_id") or image.get("sequence_id") or ""
        frame = image.get("frame_num", image.get("seq_frame_num", 0)) or 0
        per_camera[camera_id].append(
            ImageRecord(
                image_id=image_id,
                camera_id=camera_id,
                timestamp=timestamp,
                sequence_id=str(seq_id) if seq_id else "",
                frame_index=int(frame),
                species=species,
                bbox=bbox,
                bbox_confidence=conf,
                image_size=image_size,
            )
        )

    streams = [
        _make_stream(camera_id, records)
        for camera_id, records in sorted(per_camera.items())
    ]
    return ParsedDataset(streams=streams, drops=drops)


def _load_document(document) -> Mapping:
    if isinstance(document, Mapping):
        return document
    text = None
    if hasattr(document, "read"):
        text = document.read()
    else:
        as_str = str(document)
        if as_str.lstrip().startswith("{"):
            text = as_str
        else:
            with open(as_str, "r", encoding="utf-8") as fh:
                text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MetadataError(f"not valid JSON: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, Mapping):
        raise MetadataError("top-level JSON value must be an object")
    return doc


def _make_stream(camera_id: str, records: Iterable[ImageRecord]) -> CameraStream:
    ordered = tuple(sorted(records, key=lambda r: (r.timestamp, r.image_id)))
    vocabulary = tuple(sorted({r.species for r in ordered}))
    return CameraStream(camera_id=camera_id, records=ordered, species_vocabulary=vocabulary)


def synthesize_sequences(stream: CameraStream, gap: timedelta = timedelta(seconds=3)) -> CameraStream:
    """Assign synthesized sequence ids to records lacking one.

    Among the records without a sequence id (in timestamp order), neighbors
    within ``gap`` of one another share a synthesized id; frame indices are
    assigned by order within each synthesized sequence. Records that already
    carry a sequence id are untouched.
    """
    missing = [r for r in stream.records if not r.sequence_id]
    if not missing:
        return stream

    groups: list[list[ImageRecord]] = []
    for record in missing:
        if groups and record.timestamp - groups[-1][-1].timestamp <= gap:
            groups[-1].append(record)
        else:
            groups.append([record])

    assigned: dict[str, tuple[str, int]] = {}
    for gi, group in enumerate(groups):
        seq_id = f"synth-{stream.camera_id}-{gi:06d}"
        for fi, record in enumerate(group):
            assigned[record.image_id] = (seq_id, fi)

    new_records = tuple(
        replace(r, sequence_id=assigned[r.image_id][0], frame_index=assigned[r.image_id][1])
        if r.image_id in assigned
        else r
        for r in stream.records
    )
    return CameraStream(stream.camera_id, new_records, stream.species_vocabulary)


def admit_camera(
    stream: CameraStream,
    min_images: int = 1000,
    min_span: timedelta = timedelta(days=180),
) -> bool:
    """True iff the stream is large and long enough for streaming evaluation."""
    return len(stream.records) > min_images and stream.span() >= min_span


def record_to_json(record: ImageRecord) -> dict:
    return {
        "image_id": record.image_id,
        "camera_id": record.camera_id,
        "timestamp": record.timestamp.isoformat(),
        "sequence_id": record.sequence_id,
        "frame_index": record.frame_index,
        "species": record.species,
        "bbox": list(record.bbox),
        "bbox_confidence": record.bbox_confidence,
        "image_size": list(record.image_size),
    }


def record_from_json(data: Mapping) -> ImageRecord:
    return ImageRecord(
        image_id=data["image_id"],
        camera_id=data["camera_id"],
        timestamp=parse_timestamp(data["timestamp"]),
        sequence_id=data["sequence_id"],
        frame_index=int(data["frame_index"]),
        species=data["species"],
        bbox=tuple(float(v) for v in data["bbox"]),
        bbox_confidence=float(data["bbox_confidence"]),
        image_size=tuple(int(v) for v in data["image_size"]),
    )


def write_stream_jsonl(stream: CameraStream, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in stream.records:
            fh.write(json.dumps(record_to_json(record), sort_keys=True) + "\n")


def read_stream_jsonl(path) -> CameraStream:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    if not records:
        raise MetadataError(f"stream file {path} is empty")
    return _make_stream(records[0].camera_id, records)
