"""Cross-language roundtrip: extractor-written stores load in the engine.

Runs the TypeScript extractor CLI (compiled to extractor/dist) on a
3-image fixture and validates the produced STEM1/STTH1 files with the
Python readers: id order, dims, norms, and deterministic zero-shot
predictions across two extraction runs.
"""

import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from streamtrap.store import read_store, read_text_head, zero_shot_predict

REPO = Path(__file__).resolve().parent.parent
EXTRACTOR_CLI = REPO / "extractor" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not EXTRACTOR_CLI.exists(),
    reason="node or built extractor (extractor/dist) not available",
)


def _fixture(tmp_path: Path) -> tuple[Path, Path]:
    crops = tmp_path / "crops"
    crops.mkdir()
    for image_id, payload in [
        ("img-001", b"fixture jpeg one"),
        ("img-002", b"fixture jpeg two"),
        ("img-003", b"fixture jpeg three"),
    ]:
        (crops / f"{image_id}.jpg").write_bytes(payload)
    benchmark = tmp_path / "cam-x.json"
    benchmark.write_text(
        json.dumps(
            {
                "camera_id": "cam-x",
                "vocabulary": ["red fox", "coyote", "moose"],
                "crop_specs": {
                    "img-001": [0, 0, 8, 8],
                    "img-002": [0, 0, 8, 8],
                    "img-003": [0, 0, 8, 8],
                },
            }
        )
    )
    return benchmark, crops


def _extract(benchmark: Path, crops: Path, out: Path) -> None:
    proc = subprocess.run(
        [
            "node",
            str(EXTRACTOR_CLI),
            "extract",
            "--model",
            "hashed-64",
            "--benchmark",
            str(benchmark),
            "--images",
            str(crops),
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0, proc.stderr


def test_cross_language_roundtrip(tmp_path):
    benchmark, crops = _fixture(tmp_path)
    _extract(benchmark, crops, tmp_path / "run1")
    _extract(benchmark, crops, tmp_path / "run2")

    store = read_store(tmp_path / "run1" / "cam-x.stem")
    assert store.ids == ["img-001", "img-002", "img-003"]
    assert store.dim == 64
    assert store.normalized
    norms = np.linalg.norm(store.data.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-4)

    head = read_text_head(tmp_path / "run1" / "cam-x.stth")
    assert head.labels == ["red fox", "coyote", "moose"]
    assert head.dim == 64

    # deterministic across extraction runs, down to the bytes
    assert (tmp_path / "run1" / "cam-x.stem").read_bytes() == (
        tmp_path / "run2" / "cam-x.stem"
    ).read_bytes()
    store2 = read_store(tmp_path / "run2" / "cam-x.stem")
    head2 = read_text_head(tmp_path / "run2" / "cam-x.stth")
    first = [zero_shot_predict(head, row) for row in store.data]
    second = [zero_shot_predict(head2, row) for row in store2.data]
    assert first == second

    missing = json.loads((tmp_path / "run1" / "cam-x.missing.json").read_text())
    assert missing == {"missing": []}
    print("ACCEPTANCE cross-language-roundtrip: PASS")


def test_missing_crops_listed(tmp_path):
    benchmark, crops = _fixture(tmp_path)
    (crops / "img-002.jpg").unlink()
    _extract(benchmark, crops, tmp_path / "out")
    store = read_store(tmp_path / "out" / "cam-x.stem")
    assert store.ids == ["img-001", "img-003"]
    missing = json.loads((tmp_path / "out" / "cam-x.missing.json").read_text())
    assert missing == {"missing": ["img-002"]}
