"""Experiment configuration: defaults, file overrides, CLI overrides.

Precedence is CLI flag > config file > default. The resolved config is
hashed (sha256 of its canonical JSON, first 12 hex digits) and every
artifact lands under ``<out_root>/<config_hash>/`` and embeds the hash, so
reports are reproducible bit-for-bit from the same inputs. The environment
variable ``STREAMTRAP_OUT`` overrides the output root.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .metadata import DEFAULT_EXCLUDED_LABELS

ENV_OUT = "STREAMTRAP_OUT"

REGIME_TOKENS = ("zero_shot", "accumulated", "accumulated_star", "oracle", "oracle_star")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # inputs
    dataset: str | None = None
    embeddings_dir: str | None = None
    shared_text_head: str | None = None  # open-set: one head for all cameras
    out_root: str = "out"
    cameras: tuple[str, ...] = ()  # empty = all

    # pipeline (build)
    window_days: int = 30
    min_interval_images: int = 200
    min_camera_images: int = 1000
    min_span_days: int = 180
    confidence_threshold: float = 0.8
    excluded_labels: tuple[str, ...] = DEFAULT_EXCLUDED_LABELS
    sequence_gap_seconds: float = 3.0
    rare_threshold: int = 10
    test_fraction: float = 0.2

    # streaming runs
    regimes: tuple[str, ...] = ("zero_shot", "accumulated", "oracle")
    freeze_fractions: tuple[float, ...] = ()
    mode: str = "linear_full"
    loss: str = "ce"
    validation: str = "accumulated"
    warm_start: bool = False
    include_rare_in_test: bool = False

    # optimizer
    max_lr: float = 2.5e-5
    min_lr: float = 4.17e-7
    weight_decay: float = 1e-4
    schedule_period: int = 60
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 10
    rank: int = 8

    # post-processing grids
    gammas: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    alphas: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    postprocess_regime: str = ""  # default: accumulated_star if run, else accumulated

    # diagnostics
    msp_temperature: float = 1.0
    decision_balance: bool = True

    workers: int = 2
    seed: int = 0

    def to_json(self) -> dict:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def out_dir(self) -> Path:
        return Path(self.out_root) / self.config_hash


_TUPLE_FIELDS = {"cameras", "excluded_labels", "regimes", "freeze_fractions", "gammas", "alphas"}


def load_config(
    path: str | None = None, overrides: dict | None = None
) -> ExperimentConfig:
    """Build a config from defaults, an optional JSON file, and overrides."""
    values: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                file_values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(file_values)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _TUPLE_FIELDS & set(values):
        values[key] = tuple(values[key])

    env_out = os.environ.get(ENV_OUT)
    if env_out:
        values["out_root"] = env_out

    config = ExperimentConfig(**values)
    for regime in config.regimes:
        if regime not in REGIME_TOKENS and not regime.startswith("frozen:"):
            raise ConfigError(f"unknown regime {regime!r}")
    for path_field in ("dataset", "embeddings_dir", "shared_text_head"):
        value = getattr(config, path_field)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"{path_field} path does not exist: {value}")
    return config


def write_manifest(config: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": config.to_json(),
        "config_hash": config.config_hash,
        "seed": config.seed,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
