"""Tables (CSV) and plot data (JSON) from a results directory.

Every emitted file embeds the config hash and seed: CSVs carry them in a
leading comment line, JSON files as top-level fields. Accuracy histograms
use fixed 5-point bins so reruns bin identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

ACCURACY_BIN_WIDTH = 5  # percent


class ReportError(RuntimeError):
    pass


def _csv_header(config_hash: str, seed: int) -> str:
    return f"# config_hash={config_hash} seed={seed}\n"


def _write_csv(path: Path, header_line: str, columns: list[str], rows: list[list]) -> None:
    lines = [header_line, ",".join(columns) + "\n"]
    for row in rows:
        lines.append(",".join(str(v) for v in row) + "\n")
    path.write_text("".join(lines), encoding="utf-8")


def _write_json(path: Path, payload: dict, config_hash: str, seed: int) -> None:
    payload = {"config_hash": config_hash, "seed": seed, **payload}
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _load_runs(out_dir: Path) -> dict[str, dict[str, dict]]:
    """{regime: {camera: per-camera run json}}"""
    runs: dict[str, dict[str, dict]] = {}
    runs_dir = out_dir / "runs"
    if not runs_dir.is_dir():
        return runs
    for regime_dir in sorted(runs_dir.iterdir()):
        if not regime_dir.is_dir():
            continue
        cameras = {}
        for path in sorted(regime_dir.glob("*.json")):
            if path.name == "manifest.json":
                continue
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            cameras[data["camera_id"]] = data
        if cameras:
            runs[regime_dir.name] = cameras
    return runs


def accuracy_histogram(values_percent: list[float]) -> list[dict]:
    """Counts per fixed 5-point accuracy bin over [0, 100]."""
    bins = []
    for lo in range(0, 100, ACCURACY_BIN_WIDTH):
        hi = lo + ACCURACY_BIN_WIDTH
        count = sum(1 for v in values_percent if lo <= v < hi or (hi == 100 and v == 100))
        bins.append({"lo": lo, "hi": hi, "count": count})
    return bins


def generate_reports(out_dir: Path, config_hash: str, seed: int) -> list[Path]:
    """Emit all report files for whatever artifacts exist under out_dir."""
    runs = _load_runs(out_dir)
    gains = {}
    gains_dir = out_dir / "gains"
    if gains_dir.is_dir():
        for path in sorted(gains_dir.glob("*.json")):
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            gains[data["camera_id"]] = data
    metrics = {}
    metrics_dir = out_dir / "metrics"
    if metrics_dir.is_dir():
        for path in sorted(metrics_dir.glob("*.json")):
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            metrics[data["camera_id"]] = data
    decisions = None
    decisions_path = out_dir / "decisions" / "policy_report.json"
    if decisions_path.exists():
        with open(decisions_path, "r", encoding="utf-8") as fh:
            decisions = json.load(fh)

    if not runs and not gains and not metrics and decisions is None:
        raise ReportError(
            f"nothing to report under {out_dir}; run `streamtrap run` (and optionally "
            "postprocess/metrics/decide) first"
        )

    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    header = _csv_header(config_hash, seed)
    written: list[Path] = []
    plots: dict = {}

    cameras = sorted({cam for per_regime in runs.values() for cam in per_regime})
    zs = runs.get("zero_shot", {})

    if runs:
        rows = []
        for regime in sorted(runs):
            for cam in sorted(runs[regime]):
                agg = 100.0 * runs[regime][cam]["aggregate"]
                delta = ""
                sign = ""
                if regime != "zero_shot" and cam in zs:
                    delta = round(agg - 100.0 * zs[cam]["aggregate"], 4)
                    sign = "improve" if delta >= 0 else "degrade"
                rows.append([cam, regime, round(agg, 4), delta, sign])
        path = reports_dir / "regime_summary.csv"
        _write_csv(path, header, ["camera_id", "regime", "aggregate", "delta_vs_zs", "delta_sign"], rows)
        written.append(path)

        # wide, one row per regime, one column per camera plus the average
        wide_rows = []
        for regime in sorted(runs):
            values = [
                round(100.0 * runs[regime][cam]["aggregate"], 4) if cam in runs[regime] else ""
                for cam in cameras
            ]
            present = [v for v in values if v != ""]
            avg = round(float(np.mean(present)), 4) if present else ""
            wide_rows.append([regime] + values + [avg])
        path = reports_dir / "table_regimes.csv"
        _write_csv(path, header, ["regime"] + cameras + ["avg"], wide_rows)
        written.append(path)

    if zs:
        values = [100.0 * data["aggregate"] for data in zs.values()]
        plots["zero_shot_histogram"] = accuracy_histogram(values)
        path = reports_dir / "zs_histogram.csv"
        _write_csv(
            path,
            header,
            ["bin_lo", "bin_hi", "count"],
            [[b["lo"], b["hi"], b["count"]] for b in plots["zero_shot_histogram"]],
        )
        written.append(path)

    for oracle_key in ("oracle", "oracle_star"):
        if oracle_key in runs and zs:
            deltas = [
                {
                    "camera_id": cam,
                    "delta": 100.0 * (runs[oracle_key][cam]["aggregate"] - zs[cam]["aggregate"]),
                }
                for cam in sorted(runs[oracle_key])
                if cam in zs
            ]
            plots[f"{oracle_key}_vs_zero_shot"] = deltas

    frozen = {r: per for r, per in runs.items() if r.startswith("frozen_")}
    if frozen:
        rows = []
        for regime in sorted(frozen, key=lambda r: float(r.split("_", 1)[1])):
            fraction = float(regime.split("_", 1)[1])
            aggs = [100.0 * d["aggregate"] for d in frozen[regime].values()]
            rows.append([regime, fraction, round(float(np.mean(aggs)), 4), len(aggs)])
        path = reports_dir / "freeze_study.csv"
        _write_csv(path, header, ["regime", "fraction", "avg_aggregate", "n_cameras"], rows)
        written.append(path)

    if gains:
        rows = []
        for cam in sorted(gains):
            mg = gains[cam]["mean_gains"]
            rows.append(
                [
                    cam,
                    round(100 * mg["calibration"], 4),
                    round(100 * mg["interpolation"], 4),
                    round(100 * mg["selection"], 4),
                    round(100 * mg["best_of_three"], 4),
                    gains[cam]["oracle_hparam"],
                ]
            )
        path = reports_dir / "gains_summary.csv"
        _write_csv(
            path,
            header,
            ["camera_id", "calibration", "interpolation", "selection", "best_of_three", "oracle_hparam"],
            rows,
        )
        written.append(path)
        plots["postprocessing_gains"] = {
            cam: gains[cam]["mean_gains"] for cam in sorted(gains)
        }

    if metrics:
        rows = []
        for cam in sorted(metrics):
            m = metrics[cam]
            rows.append(
                [
                    cam,
                    round(m["tcds"]["tcds"], 6),
                    round(m["imbalance"]["top2_fraction"], 6),
                    m["imbalance"]["least2_count"],
                ]
            )
        path = reports_dir / "shift_imbalance.csv"
        _write_csv(path, header, ["camera_id", "tcds", "top2_fraction", "least2_count"], rows)
        written.append(path)
        tcds_values = [m["tcds"]["tcds"] for m in metrics.values()]
        top2_values = [100.0 * m["imbalance"]["top2_fraction"] for m in metrics.values()]
        plots["tcds_histogram"] = np.histogram(tcds_values, bins=8, range=(0.0, 2.0))[0].tolist()
        plots["top2_fraction_histogram"] = accuracy_histogram(top2_values)

    if decisions is not None:
        plots["decision_policies"] = decisions.get("policies", decisions)
        path = reports_dir / "decisions_heatmap.json"
        _write_json(path, {"policies": plots["decision_policies"]}, config_hash, seed)
        written.append(path)

    path = reports_dir / "plots.json"
    _write_json(path, {"plots": plots}, config_hash, seed)
    written.append(path)
    return written
