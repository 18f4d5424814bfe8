"""Command-line front end: build, run, postprocess, metrics, decide, report.

Artifacts land under ``<out_root>/<config_hash>/``:

    manifest.json                     resolved config + hash + seed
    streams/<camera>.jsonl            canonical per-camera record streams
    drop_report.json                  drop counts and per-camera admission
    benchmarks/<camera>.json          interval benchmarks
    runs/<regime>/<camera>.json       per-camera run results (+ manifest.json)
    runs/<regime>/results.jsonl       merged rows, one per camera x interval
    checkpoints/<camera>/<regime>/<j>.sthd
    gains/<camera>.json               post-processing sweeps (oracle_hparam)
    metrics/<camera>.json             TCDS, imbalance, confidence summaries
    decisions/instances.jsonl, policy_report.json
    reports/*.csv, *.json

Commands exit 0 on success; failures print a machine-readable JSON object
to stderr and exit nonzero. Reruns reuse completed per-camera results and
checkpoints, so an interrupted run can simply be restarted.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import adapt, decisions as decisions_mod, engine, intervals, metadata, postprocess, shift
from .config import ConfigError, ExperimentConfig, load_config, write_manifest
from .reports import generate_reports
from .store import read_store, read_text_head


def _train_config(config: ExperimentConfig) -> adapt.TrainConfig:
    return adapt.TrainConfig(
        max_lr=config.max_lr,
        min_lr=config.min_lr,
        weight_decay=config.weight_decay,
        schedule_period=config.schedule_period,
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        patience=config.patience,
        rank=config.rank,
        seed=config.seed,
    )


def _regime_plan(config: ExperimentConfig) -> list[tuple[str, str, engine.RunSettings, float | None]]:
    """(token, output name, settings, freeze fraction) per requested regime."""
    base = dict(
        train=_train_config(config),
        validation=config.validation,
        warm_start=config.warm_start,
        include_rare_in_test=config.include_rare_in_test,
    )
    plan = []
    tokens = list(config.regimes) + [f"frozen:{f}" for f in config.freeze_fractions]
    for token in tokens:
        if token.startswith("frozen:"):
            fraction = float(token.split(":", 1)[1])
            settings = engine.RunSettings(mode=config.mode, loss=config.loss, **base)
            plan.append((token, f"frozen_{fraction:g}", settings, fraction))
        elif token.endswith("_star"):
            settings = engine.RunSettings(mode="low_rank", loss="bsm", **base)
            plan.append((token, token, settings, None))
        else:
            settings = engine.RunSettings(mode=config.mode, loss=config.loss, **base)
            plan.append((token, token, settings, None))
    return plan


def _camera_assets(config: ExperimentConfig, out_dir: Path, camera: str):
    benchmark = intervals.read_benchmark(out_dir / "benchmarks" / f"{camera}.json")
    emb_dir = Path(config.embeddings_dir)
    store = read_store(emb_dir / f"{camera}.stem")
    if config.shared_text_head:
        head = read_text_head(config.shared_text_head)
    else:
        head = read_text_head(emb_dir / f"{camera}.stth")
    return benchmark, store, head


def _save_run(out_dir: Path, config: ExperimentConfig, name: str, result: engine.RunResult) -> None:
    regime_dir = out_dir / "runs" / name
    regime_dir.mkdir(parents=True, exist_ok=True)
    ckpt_files = []
    for head in result.checkpoints:
        j = head.provenance.trained_through_interval
        ckpt_dir = out_dir / "checkpoints" / result.camera_id / name
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        path = ckpt_dir / f"{j}.sthd"
        adapt.write_head(head, path)
        ckpt_files.append(str(path.relative_to(out_dir)))
    payload = {
        "camera_id": result.camera_id,
        "regime": result.regime,
        "aggregate": result.aggregate,
        "rows": engine.result_rows(result, config.config_hash, config.seed),
        "zero_shot_interval0": None
        if result.zero_shot_interval0 is None
        else {
            "interval": result.zero_shot_interval0.interval,
            "balanced_accuracy": result.zero_shot_interval0.balanced_accuracy,
        },
        "checkpoint_files": ckpt_files,
        "config_hash": config.config_hash,
        "seed": config.seed,
    }
    with open(regime_dir / f"{result.camera_id}.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_run(out_dir: Path, name: str, camera: str) -> tuple[dict, list[adapt.AdaptedHead]]:
    """Per-camera run payload plus its checkpoints, loaded from disk."""
    path = out_dir / "runs" / name / f"{camera}.json"
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    heads = [adapt.read_head(out_dir / rel) for rel in payload["checkpoint_files"]]
    return payload, heads


def _rebuild_result(payload: dict, heads: list[adapt.AdaptedHead]) -> engine.RunResult:
    scores = [
        engine.IntervalScore(
            interval=row["interval"],
            balanced_accuracy=row["balanced_accuracy"],
            per_class=row["per_class"],
            n_test=row["n_test"],
        )
        for row in payload["rows"]
    ]
    return engine.RunResult(
        camera_id=payload["camera_id"],
        regime=payload["regime"],
        per_interval=scores,
        aggregate=payload["aggregate"],
        head_checkpoints=[h.provenance for h in heads],
        checkpoints=heads,
    )


# --- subcommands -------------------------------------------------------------


def cmd_build(config: ExperimentConfig) -> int:
    if not config.dataset:
        raise ConfigError("build needs a dataset path (--dataset or config file)")
    out_dir = config.out_dir()
    write_manifest(config, out_dir)
    (out_dir / "streams").mkdir(parents=True, exist_ok=True)
    (out_dir / "benchmarks").mkdir(parents=True, exist_ok=True)

    parsed = metadata.parse_metadata(
        config.dataset,
        metadata.FilterConfig(
            confidence_threshold=config.confidence_threshold,
            excluded_labels=config.excluded_labels,
        ),
    )
    gap = timedelta(seconds=config.sequence_gap_seconds)
    cameras: dict[str, str] = {}
    built = 0
    for stream in parsed.streams:
        if config.cameras and stream.camera_id not in config.cameras:
            cameras[stream.camera_id] = "excluded_by_allowlist"
            continue
        stream = metadata.synthesize_sequences(stream, gap)
        if not metadata.admit_camera(
            stream,
            min_images=config.min_camera_images,
            min_span=timedelta(days=config.min_span_days),
        ):
            cameras[stream.camera_id] = (
                f"failed_admission (n={len(stream)}, span_days={stream.span().days})"
            )
            continue
        benchmark = intervals.build_benchmark(
            stream,
            seed=config.seed,
            window=timedelta(days=config.window_days),
            min_images=config.min_interval_images,
            rare_threshold=config.rare_threshold,
            test_fraction=config.test_fraction,
        )
        metadata.write_stream_jsonl(stream, out_dir / "streams" / f"{stream.camera_id}.jsonl")
        payload = intervals.benchmark_to_json(benchmark)
        payload["config_hash"] = config.config_hash
        payload["seed"] = config.seed
        with open(out_dir / "benchmarks" / f"{stream.camera_id}.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
        cameras[stream.camera_id] = "admitted"
        built += 1

    report = {
        "record_drops": dict(sorted(parsed.drops.items())),
        "cameras": dict(sorted(cameras.items())),
        "config_hash": config.config_hash,
        "seed": config.seed,
    }
    with open(out_dir / "drop_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"built {built} benchmark(s) under {out_dir}")
    return 0


def _built_cameras(config: ExperimentConfig, out_dir: Path) -> list[str]:
    bench_dir = out_dir / "benchmarks"
    cams = sorted(p.stem for p in bench_dir.glob("*.json")) if bench_dir.is_dir() else []
    if config.cameras:
        cams = [c for c in cams if c in config.cameras]
    if not cams:
        raise ConfigError(f"no benchmarks under {bench_dir}; run `streamtrap build` first")
    return cams


def cmd_run(config: ExperimentConfig) -> int:
    if not config.embeddings_dir:
        raise ConfigError("run needs --embeddings-dir (STEM1/STTH1 files per camera)")
    out_dir = config.out_dir()
    write_manifest(config, out_dir)
    cameras = _built_cameras(config, out_dir)
    plan = _regime_plan(config)

    def run_camera(camera: str) -> list[str]:
        done = []
        benchmark, store, head = _camera_assets(config, out_dir, camera)
        for token, name, settings, fraction in plan:
            target = out_dir / "runs" / name / f"{camera}.json"
            if target.exists():
                done.append(f"{camera}/{name}: reused")
                continue
            if token == "zero_shot":
                result = engine.run_zero_shot(benchmark, store, head, settings)
            elif token.startswith("frozen:"):
                # engine names the result frozen_at_<k>; the directory is per fraction
                result = engine.run_frozen(benchmark, store, head, settings, fraction)
            elif token.startswith("oracle"):
                result = engine.run_oracle(benchmark, store, head, settings)
                result.regime = name
            else:
                result = engine.run_accumulated(benchmark, store, head, settings)
                result.regime = name
            _save_run(out_dir, config, name, result)
            done.append(f"{camera}/{name}: ok")
        return done

    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        for messages in pool.map(run_camera, cameras):
            for message in messages:
                print(message)

    for token, name, _, _ in plan:
        regime_dir = out_dir / "runs" / name
        rows = []
        for camera in cameras:
            path = regime_dir / f"{camera}.json"
            if path.exists():
                with open(path, "r", encoding="utf-8") as fh:
                    rows.extend(json.load(fh)["rows"])
        with open(regime_dir / "results.jsonl", "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(regime_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"regime": name, "config_hash": config.config_hash, "seed": config.seed},
                fh,
                sort_keys=True,
                indent=1,
            )
            fh.write("\n")
    return 0


def _postprocess_regime(config: ExperimentConfig, out_dir: Path) -> str:
    if config.postprocess_regime:
        return config.postprocess_regime
    for name in ("accumulated_star", "accumulated"):
        if (out_dir / "runs" / name).is_dir():
            return name
    raise ConfigError("no accumulated run found; run `streamtrap run` first")


def cmd_postprocess(config: ExperimentConfig) -> int:
    out_dir = config.out_dir()
    regime = _postprocess_regime(config, out_dir)
    cameras = _built_cameras(config, out_dir)
    gains_dir = out_dir / "gains"
    gains_dir.mkdir(parents=True, exist_ok=True)
    for camera in cameras:
        benchmark, store, head = _camera_assets(config, out_dir, camera)
        payload, heads = load_run(out_dir, regime, camera)
        result = _rebuild_result(payload, heads)
        report = postprocess.sweep_hyperparameters(
            benchmark, store, head, result, gammas=config.gammas, alphas=config.alphas
        )
        data = postprocess.gains_to_json(report)
        data["regime"] = regime
        data["config_hash"] = config.config_hash
        data["seed"] = config.seed
        with open(gains_dir / f"{camera}.json", "w", encoding="utf-8") as fh:
            json.dump(data, fh, sort_keys=True, indent=1)
            fh.write("\n")
        print(f"{camera}: gains written ({regime})")
    return 0


def cmd_metrics(config: ExperimentConfig) -> int:
    out_dir = config.out_dir()
    cameras = _built_cameras(config, out_dir)
    metrics_dir = out_dir / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    for camera in cameras:
        benchmark, store, head = _camera_assets(config, out_dir, camera)
        usable = engine.usable_intervals(benchmark)
        zs_head = adapt.head_from_text(head)
        tcds_report = shift.tcds([iv.class_histogram for iv in usable], camera)
        confidences = []
        for interval in usable:
            ids = list(interval.test_ids)
            summary = shift.confidence_summary(
                zs_head, store.rows(ids), config.msp_temperature
            )
            confidences.append(
                {
                    "interval": interval.index,
                    "mean_msp": summary.mean_msp,
                    "mean_gap": summary.mean_gap,
                    "n": len(ids),
                }
            )
        payload = {
            "camera_id": camera,
            "tcds": {
                "per_step": [[j, v] for j, v in tcds_report.per_step],
                "tcds": tcds_report.tcds,
            },
            "imbalance": {
                "top2_fraction": benchmark.imbalance.top2_fraction,
                "least2_count": benchmark.imbalance.least2_count,
                "degenerate": benchmark.imbalance.degenerate,
            },
            "zero_shot_confidence": confidences,
            "temperature": config.msp_temperature,
            "config_hash": config.config_hash,
            "seed": config.seed,
        }
        with open(metrics_dir / f"{camera}.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
        print(f"{camera}: metrics written")
    return 0


def cmd_decide(config: ExperimentConfig) -> int:
    out_dir = config.out_dir()
    regime = _postprocess_regime(config, out_dir)
    cameras = _built_cameras(config, out_dir)
    entries = []
    shared_head = None
    for camera in cameras:
        benchmark, store, head = _camera_assets(config, out_dir, camera)
        shared_head = head
        payload, heads = load_run(out_dir, regime, camera)
        entries.append((benchmark, _rebuild_result(payload, heads), store))
    if shared_head is None:
        raise ConfigError("no cameras available for decision benchmark")

    # per-camera text heads may differ; build_decision_set only uses the head
    # for zero-shot statistics, so pass each camera's own head by rebuilding
    # per-camera and concatenating.
    instances = []
    for (benchmark, result, store), camera in zip(entries, cameras):
        _, _, head = _camera_assets(config, out_dir, camera)
        try:
            instances.extend(
                decisions_mod.build_decision_set(
                    [(benchmark, result, store)],
                    head,
                    balance=False,
                    seed=config.seed,
                    temperature=config.msp_temperature,
                )
            )
        except ValueError:
            continue  # camera too short for decision instances
    if not instances:
        raise ConfigError("no eligible decision instances (cameras too short?)")
    if config.decision_balance:
        instances = decisions_mod.balance_instances(instances, config.seed)
        if not instances:
            raise ConfigError(
                "balancing removed every instance (all ground-truth actions agree); "
                "set decision_balance=false or use longer runs"
            )

    decisions_dir = out_dir / "decisions"
    decisions_dir.mkdir(parents=True, exist_ok=True)
    with open(decisions_dir / "instances.jsonl", "w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(json.dumps(decisions_mod.instance_to_json(instance), sort_keys=True) + "\n")

    results = decisions_mod.evaluate_policies(instances, seed=config.seed)
    policies = {}
    for res in results:
        by_action = {}
        for action in (decisions_mod.SKIP, decisions_mod.ADAPT):
            subset = [
                (inst, d)
                for inst, d in zip(instances, res.decisions)
                if inst.ground_truth == action
            ]
            if subset:
                by_action[action] = float(
                    np.mean(
                        [
                            inst.adapt_accuracy if d == decisions_mod.ADAPT else inst.skip_accuracy
                            for inst, d in subset
                        ]
                    )
                )
        policies[res.policy] = {
            "balanced_accuracy": res.balanced_accuracy,
            "binary_accuracy": res.binary_accuracy,
            "by_ground_truth": by_action,
        }
    with open(decisions_dir / "policy_report.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "regime": regime,
                "n_instances": len(instances),
                "balanced": config.decision_balance,
                "policies": policies,
                "config_hash": config.config_hash,
                "seed": config.seed,
            },
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")
    print(f"decision benchmark: {len(instances)} instances, report written")
    return 0


def cmd_report(config: ExperimentConfig) -> int:
    out_dir = config.out_dir()
    written = generate_reports(out_dir, config.config_hash, config.seed)
    for path in written:
        print(f"wrote {path}")
    return 0


# --- argument parsing --------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--dataset", help="metadata JSON document")
    parser.add_argument("--embeddings-dir", dest="embeddings_dir")
    parser.add_argument("--shared-text-head", dest="shared_text_head")
    parser.add_argument("--out", dest="out_root")
    parser.add_argument("--cameras", nargs="*", help="camera allowlist")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--regimes", nargs="*")
    parser.add_argument("--freeze-fractions", dest="freeze_fractions", nargs="*", type=float)
    parser.add_argument("--loss", choices=("ce", "bsm"))
    parser.add_argument("--mode", choices=("linear_full", "low_rank"))
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--max-lr", dest="max_lr", type=float)
    parser.add_argument("--min-camera-images", dest="min_camera_images", type=int)
    parser.add_argument("--min-span-days", dest="min_span_days", type=int)
    parser.add_argument("--min-interval-images", dest="min_interval_images", type=int)
    parser.add_argument("--postprocess-regime", dest="postprocess_regime")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in {"command", "config", "func"} and value is not None
    }
    for key in ("cameras", "regimes", "freeze_fractions"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="streamtrap",
        description="Streaming camera-trap benchmarks and adaptation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (
        ("build", cmd_build),
        ("run", cmd_run),
        ("postprocess", cmd_postprocess),
        ("metrics", cmd_metrics),
        ("decide", cmd_decide),
        ("report", cmd_report),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(func=func)

    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        return args.func(config)
    except Exception as exc:  # surface every failure as machine-readable JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
