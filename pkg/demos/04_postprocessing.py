"""Post-processing an adapted head: calibration, interpolation, selection.

All three techniques are tuned against the next interval's labeled test
split, so the reported gains are an upper bound (every report is flagged
oracle_hparam) - picking the settings without future labels is open.
"""

import numpy as np

from streamtrap import engine, postprocess, synthetic
from streamtrap.adapt import AdaptedHead, TrainConfig
from streamtrap.engine import RunSettings
from streamtrap.postprocess import CalibrationSpec, calibrate_predict, interpolate_heads

# logit calibration on a crafted head: the class absent from training is
# suppressed; an additive boost gamma restores it
head = AdaptedHead(labels=["common", "absent"], base_weights=np.eye(2),
                   class_counts={"common": 40, "absent": 0})
z = np.array([0.55, 0.5])  # raw logits favor "common"
for gamma in (0.0, 0.3):
    spec = CalibrationSpec(gamma=gamma, target_set=frozenset({"absent"}))
    print(f"gamma={gamma}: predicts {calibrate_predict(head, z, spec)}")

# weight interpolation: a convex path between the zero-shot and fine-tuned head
pre = AdaptedHead(labels=["a"], base_weights=np.array([[0.0]]))
fin = AdaptedHead(labels=["a"], base_weights=np.array([[2.0]]))
print("\ninterpolated scalar weight:",
      [float(interpolate_heads(pre, fin, a).base_weights[0, 0]) for a in (1.0, 0.5, 0.0)])

# full sweep on a shifted stream
cam = synthetic.make_synthetic_camera(
    n_classes=4, n_intervals=6, images_per_interval=420,
    class_probs=synthetic.alternating_probs(6, 4, major=0.85),
    noise=0.55, center_drift=0.25, seed=3, min_interval_images=60, rare_threshold=5,
)
settings = RunSettings(
    train=TrainConfig(max_lr=0.05, min_lr=1e-3, max_epochs=25, schedule_period=25, seed=0),
    mode="low_rank", loss="bsm",
)
run = engine.run_accumulated(cam.benchmark, cam.store, cam.text_head, settings)
report = postprocess.sweep_hyperparameters(cam.benchmark, cam.store, cam.text_head, run)

print(f"\nper-interval best-grid gains over the accumulated baseline "
      f"(oracle_hparam={report.oracle_hparam}):")
print(f"{'interval':>8} {'baseline':>9} {'calib':>7} {'interp':>7} {'select':>7} {'best':>7}")
for g in report.per_interval:
    print(f"{g.interval:>8} {g.baseline:>9.3f} {g.calibration.gain:>+7.3f} "
          f"{g.interpolation.gain:>+7.3f} {g.selection.gain:>+7.3f} {g.best().gain:>+7.3f}")
means = report.mean_gains()
print(f"{'mean':>8} {'':>9} {means['calibration']:>+7.3f} {means['interpolation']:>+7.3f} "
      f"{means['selection']:>+7.3f} {means['best_of_three']:>+7.3f}")
