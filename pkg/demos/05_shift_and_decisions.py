"""Temporal shift diagnostics and the adapt-or-skip decision problem.

The class-distribution shift of a camera (mean consecutive L1 distance of
normalized class histograms, range 0..2) quantifies how much the species
mix moves between intervals. Confidence (max softmax probability) gives a
cheap, imperfect signal of when a model will struggle; the adapt-or-skip
benchmark asks whether simple signals can tell when retraining will help.
"""

import numpy as np

from streamtrap import adapt, decisions, engine, shift, synthetic
from streamtrap.adapt import TrainConfig
from streamtrap.engine import RunSettings

# --- shift metric on two contrasting cameras
stationary = synthetic.make_synthetic_camera(camera_id="calm", n_classes=4, n_intervals=6,
                                             images_per_interval=200, seed=0,
                                             min_interval_images=50)
shifting = synthetic.make_synthetic_camera(
    camera_id="wild", n_classes=4, n_intervals=6, images_per_interval=200,
    class_probs=synthetic.alternating_probs(6, 4, major=0.9), seed=0,
    min_interval_images=50, rare_threshold=5,
)
for cam in (stationary, shifting):
    hists = [iv.class_histogram for iv in engine.usable_intervals(cam.benchmark)]
    report = shift.tcds(hists, cam.camera_id)
    print(f"{cam.camera_id}: shift={report.tcds:.3f} per-step="
          f"{[round(d, 2) for _, d in report.per_step]}")

# --- confidence correlates (imperfectly) with zero-shot accuracy: cameras
# share the class geometry (fixed seed) but differ in embedding noise
points = []
for k in range(8):
    cam = synthetic.make_synthetic_camera(camera_id=f"c{k}", n_classes=4, n_intervals=3,
                                          images_per_interval=150, noise=0.25 + 0.09 * k,
                                          seed=3, min_interval_images=40)
    head = adapt.head_from_text(cam.text_head)
    test_ids = [i for iv in cam.benchmark.intervals for i in iv.test_ids]
    summary = shift.confidence_summary(head, cam.store.rows(test_ids))
    run = engine.run_zero_shot(cam.benchmark, cam.store, cam.text_head)
    points.append((summary.mean_msp, run.aggregate))
r = shift.confidence_accuracy_correlation(points)
print(f"\nmean-MSP vs zero-shot accuracy over {len(points)} cameras: Pearson r = {r:.3f}")

# --- adapt-or-skip
settings = RunSettings(
    train=TrainConfig(max_lr=0.05, min_lr=1e-3, max_epochs=10, schedule_period=10, seed=0),
    mode="low_rank", loss="bsm",
)
entries, head = [], None
for seed in range(4):
    cam = synthetic.make_synthetic_camera(
        camera_id=f"dec-{seed}", n_classes=4, n_intervals=6, images_per_interval=170,
        class_probs=synthetic.alternating_probs(6, 4, major=0.85), center_drift=0.3,
        noise=0.5, seed=seed, min_interval_images=40, rare_threshold=5,
    )
    run = engine.run_accumulated(cam.benchmark, cam.store, cam.text_head, settings)
    entries.append((cam.benchmark, run, cam.store))
    head = cam.text_head

instances = decisions.build_decision_set(entries, head, balance=True, seed=0)
n_adapt = sum(1 for i in instances if i.ground_truth == decisions.ADAPT)
print(f"\nbalanced decision set: {len(instances)} instances "
      f"({n_adapt} adapt / {len(instances) - n_adapt} skip)")
print(f"{'policy':<20} {'followed acc':>12} {'binary acc':>11}")
for res in decisions.evaluate_policies(instances, seed=1):
    print(f"{res.policy:<20} {res.balanced_accuracy:>12.3f} {res.binary_accuracy:>11.3f}")
print("\n(the oracle row is the upper bound; heuristics hover near chance)")
