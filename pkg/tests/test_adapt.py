"""Head training: losses, gradients, schedules, checkpoints."""

import math

import numpy as np
import pytest

from streamtrap import adapt
from streamtrap.adapt import (
    AdaptedHead,
    ConfigurationError,
    Provenance,
    TrainConfig,
    bsm_loss,
    cosine_lr,
    cross_entropy_loss,
    head_from_text,
    logits,
    loss_and_gradients,
    make_validation,
    predict,
    read_head,
    train_head,
    write_head,
)
from streamtrap.store import StoreFormatError, TextHead
from streamtrap.synthetic import make_synthetic_camera


def unit(rows):
    rows = np.atleast_2d(rows)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def random_head(rng, n_classes=5, dim=16, adapter_rank=None, counts=None):
    labels = [f"c{i}" for i in range(n_classes)]
    weights = rng.normal(size=(n_classes, dim))
    adapter = None
    if adapter_rank:
        adapter = (
            rng.normal(size=(dim, adapter_rank)) * 0.2,
            rng.normal(size=(adapter_rank, dim)) * 0.2,
        )
    if counts is None:
        counts = {l: int(n) for l, n in zip(labels, rng.integers(1, 30, size=n_classes))}
    return AdaptedHead(labels=labels, base_weights=weights, adapter=adapter, class_counts=counts)


# --- logits ------------------------------------------------------------------


def test_logits_without_adapter():
    head = AdaptedHead(labels=["a", "b"], base_weights=np.array([[1.0, 0.0], [0.0, 2.0]]))
    np.testing.assert_allclose(logits(head, np.array([3.0, 4.0])), [3.0, 8.0])


def test_zero_b_adapter_is_noop():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 8))
    plain = AdaptedHead(labels=["a", "b", "c"], base_weights=w)
    adapted = AdaptedHead(
        labels=["a", "b", "c"],
        base_weights=w,
        adapter=(np.zeros((8, 2)), rng.normal(size=(2, 8))),
    )
    z = rng.normal(size=(10, 8))
    np.testing.assert_array_equal(logits(adapted, z), logits(plain, z))


def test_full_rank_negative_identity_adapter_kills_logits():
    rng = np.random.default_rng(1)
    d = 6
    head = AdaptedHead(
        labels=["a", "b"],
        base_weights=rng.normal(size=(2, d)),
        adapter=(-np.eye(d), np.eye(d)),  # BA = -I -> z' = 0
    )
    np.testing.assert_allclose(logits(head, rng.normal(size=d)), np.zeros(2), atol=1e-12)


# --- losses ------------------------------------------------------------------


def test_bsm_worked_values():
    head = AdaptedHead(
        labels=["a", "b"], base_weights=np.eye(2), class_counts={"a": 3, "b": 1}
    )
    z = np.zeros(2)  # logits (0, 0)
    assert bsm_loss(head, z, "a") == pytest.approx(-math.log(3 / 4), abs=1e-12)
    assert bsm_loss(head, z, "b") == pytest.approx(-math.log(1 / 4), abs=1e-12)


def test_bsm_equals_ce_for_uniform_counts():
    rng = np.random.default_rng(2)
    head = random_head(rng, counts={f"c{i}": 1 for i in range(5)})
    for _ in range(100):
        z = rng.normal(size=16)
        label = f"c{rng.integers(0, 5)}"
        assert abs(bsm_loss(head, z, label) - cross_entropy_loss(head, z, label)) < 1e-9


def test_losses_nonnegative_and_bsm_vanishes_at_optimum():
    rng = np.random.default_rng(3)
    head = random_head(rng)
    for _ in range(50):
        z = rng.normal(size=16)
        label = f"c{rng.integers(0, 5)}"
        assert bsm_loss(head, z, label) >= 0
        assert cross_entropy_loss(head, z, label) >= 0
    # push the true logit to +inf limit: loss -> 0
    strong = AdaptedHead(
        labels=["a", "b"], base_weights=np.array([[50.0, 0.0], [0.0, 1.0]]),
        class_counts={"a": 1, "b": 9},
    )
    assert bsm_loss(strong, np.array([1.0, 0.0]), "a") < 1e-9


def test_bsm_zero_count_class_errors():
    head = AdaptedHead(
        labels=["a", "b"], base_weights=np.eye(2), class_counts={"a": 5, "b": 0}
    )
    with pytest.raises(ConfigurationError, match="zero training count"):
        bsm_loss(head, np.zeros(2), "b")


def test_unknown_label_errors():
    head = AdaptedHead(labels=["a"], base_weights=np.eye(1), class_counts={"a": 1})
    with pytest.raises(ConfigurationError, match="vocabulary"):
        cross_entropy_loss(head, np.zeros(1), "zebra")


def test_zero_count_classes_leave_bsm_denominator():
    # with class b absent from training, BSM over (a, c) only
    head = AdaptedHead(
        labels=["a", "b", "c"],
        base_weights=np.eye(3),
        class_counts={"a": 2, "b": 0, "c": 2},
    )
    z = np.zeros(3)
    # counts equal among scored classes -> plain 2-way CE
    assert bsm_loss(head, z, "a") == pytest.approx(math.log(2), abs=1e-12)


# --- gradients vs central differences ----------------------------------------


def _fd_gradient(head, z, labels, loss, mode, key, eps=1e-6):
    if key == "W":
        arr = head.base_weights
    elif key == "B":
        arr = head.adapter[0]
    else:
        arr = head.adapter[1]
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        up, _ = loss_and_gradients(head, z, labels, loss=loss, mode=mode)
        arr[idx] = orig - eps
        down, _ = loss_and_gradients(head, z, labels, loss=loss, mode=mode)
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
        it.iternext()
    return grad


@pytest.mark.parametrize("loss", ["ce", "bsm"])
@pytest.mark.parametrize("mode", ["linear_full", "low_rank"])
def test_gradients_match_finite_differences(loss, mode):
    rng = np.random.default_rng(4)
    head = random_head(rng, n_classes=4, dim=6, adapter_rank=2)
    z = rng.normal(size=(7, 6))
    labels = [f"c{rng.integers(0, 4)}" for _ in range(7)]
    _, grads = loss_and_gradients(head, z, labels, loss=loss, mode=mode)
    for key, analytic in grads.items():
        numeric = _fd_gradient(head, z, labels, loss, mode, key)
        denom = np.maximum(1e-8, np.maximum(np.abs(numeric), np.abs(analytic)))
        assert np.max(np.abs(numeric - analytic) / denom) < 1e-4


# --- training ----------------------------------------------------------------


def test_cosine_schedule_endpoints():
    config = TrainConfig(max_lr=1.0, min_lr=0.1, schedule_period=60)
    assert cosine_lr(0, config) == pytest.approx(1.0)
    assert cosine_lr(60, config) == pytest.approx(0.1)
    assert cosine_lr(30, config) == pytest.approx(0.55)


def test_separable_toy_reaches_full_train_accuracy():
    rng = np.random.default_rng(42)
    mu = unit(rng.normal(size=(2, 8)))
    z = np.vstack(
        [unit(mu[0] + 0.05 * rng.normal(size=(10, 8))), unit(mu[1] + 0.05 * rng.normal(size=(10, 8)))]
    )
    y = ["a"] * 10 + ["b"] * 10
    # start from a deliberately swapped head: 0% initial accuracy
    head0 = TextHead(labels=["a", "b"], vectors=unit(mu[::-1]).astype(np.float32))
    init_pred = predict(head_from_text(head0), z)
    assert np.mean([p == t for p, t in zip(init_pred, y)]) == 0.0
    config = TrainConfig(max_lr=0.5, min_lr=1e-3, max_epochs=60, schedule_period=60, seed=0)
    trained = train_head((z, y), None, head0, config, mode="linear_full", loss="ce")
    pred = predict(trained, z)
    assert np.mean([p == t for p, t in zip(pred, y)]) == 1.0


def test_zero_epochs_returns_initialization():
    rng = np.random.default_rng(5)
    head0 = TextHead(labels=["a", "b"], vectors=unit(rng.normal(size=(2, 8))).astype(np.float32))
    z = rng.normal(size=(6, 8))
    y = ["a", "b", "a", "b", "a", "b"]
    config = TrainConfig(max_lr=0.1, max_epochs=0, seed=0)
    out = train_head((z, y), None, head0, config, mode="linear_full", loss="ce")
    np.testing.assert_array_equal(out.base_weights, head0.vectors.astype(np.float64))
    low = train_head((z, y), None, head0, config, mode="low_rank", loss="ce")
    np.testing.assert_array_equal(logits(low, z), logits(head_from_text(head0), z))


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(6)
    head0 = TextHead(labels=["a", "b", "c"], vectors=unit(rng.normal(size=(3, 8))).astype(np.float32))
    z = unit(rng.normal(size=(40, 8)))
    y = [np.random.default_rng(1).choice(["a", "b", "c"]) for _ in range(40)]
    config = TrainConfig(max_lr=0.1, min_lr=1e-3, max_epochs=12, schedule_period=12, seed=9)
    val = (z[:9], y[:9])
    runs = [
        train_head((z, y), val, head0, config, mode="low_rank", loss="bsm") for _ in range(2)
    ]
    assert np.array_equal(runs[0].adapter[0], runs[1].adapter[0])
    assert np.array_equal(runs[0].adapter[1], runs[1].adapter[1])
    assert np.array_equal(runs[0].base_weights, runs[1].base_weights)


def test_bsm_beats_ce_on_imbalanced_toy():
    rng = np.random.default_rng(42)
    d = 8
    theta = 0.5
    m0 = np.zeros(d)
    m0[0] = 1.0
    m1 = np.zeros(d)
    m1[0], m1[1] = np.cos(theta), np.sin(theta)
    sig = 0.45
    z_train = np.vstack(
        [unit(m0 + sig * rng.normal(size=(180, d))), unit(m1 + sig * rng.normal(size=(20, d)))]
    )
    y_train = ["a"] * 180 + ["b"] * 20
    z_test = np.vstack(
        [unit(m0 + sig * rng.normal(size=(150, d))), unit(m1 + sig * rng.normal(size=(150, d)))]
    )
    y_test = ["a"] * 150 + ["b"] * 150
    head0 = TextHead(
        labels=["a", "b"],
        vectors=unit(np.vstack([m0, m1]) + 0.4 * rng.normal(size=(2, d))).astype(np.float32),
    )
    config = TrainConfig(max_lr=0.1, min_lr=1e-3, max_epochs=40, schedule_period=40, seed=0)

    def balanced(head):
        pred = predict(head, z_test)
        r0 = np.mean([p == "a" for p, t in zip(pred, y_test) if t == "a"])
        r1 = np.mean([p == "b" for p, t in zip(pred, y_test) if t == "b"])
        return (r0 + r1) / 2

    ce = train_head((z_train, y_train), None, head0, config, mode="linear_full", loss="ce")
    bsm = train_head((z_train, y_train), None, head0, config, mode="linear_full", loss="bsm")

    # independent oracle: brute-force threshold scan along the class axis
    proj = z_test @ (m1 - m0)
    best = 0.0
    for t in np.linspace(proj.min(), proj.max(), 400):
        pred = np.where(proj > t, "b", "a")
        r0 = np.mean([p == "a" for p, tt in zip(pred, y_test) if tt == "a"])
        r1 = np.mean([p == "b" for p, tt in zip(pred, y_test) if tt == "b"])
        best = max(best, (r0 + r1) / 2)

    assert balanced(bsm) >= balanced(ce)
    assert balanced(bsm) <= best + 0.02  # cannot beat the balanced boundary


def test_empty_train_set_errors():
    head0 = TextHead(labels=["a"], vectors=np.array([[1.0]], dtype=np.float32))
    with pytest.raises(ConfigurationError, match="empty"):
        train_head((np.zeros((0, 1)), []), None, head0, TrainConfig(max_epochs=1))


# --- validation construction -------------------------------------------------


def test_make_validation_rules():
    cam = make_synthetic_camera(
        n_classes=5, n_intervals=4, images_per_interval=150, seed=0, min_interval_images=40
    )
    benchmark = cam.benchmark
    oracle_val = make_validation(True, benchmark, seed=1)
    per_class = {}
    for image_id in oracle_val:
        per_class.setdefault(benchmark.labels[image_id], []).append(image_id)
    train_ids = {i for iv in benchmark.intervals for i in iv.train_ids}
    assert set(oracle_val) <= train_ids
    assert all(len(ids) <= 2 for ids in per_class.values())
    classes_with_two = [c for c, ids in per_class.items() if len(ids) == 2]
    assert len(classes_with_two) >= 1  # every populous class holds out 2

    assert make_validation(False, benchmark, j=0) == []
    assert make_validation(False, benchmark, j=3) == list(benchmark.intervals[2].test_ids)


# --- head checkpoints --------------------------------------------------------


def test_head_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    head = random_head(rng, adapter_rank=3)
    head.loss_kind = "bsm"
    head.provenance = Provenance(camera_id="cam-1", trained_through_interval=4, seed=11)
    path = tmp_path / "head.sthd"
    write_head(head, path)
    back = read_head(path)
    assert back.labels == head.labels
    assert back.loss_kind == "bsm"
    assert back.class_counts == head.class_counts
    assert back.provenance == head.provenance
    np.testing.assert_array_equal(back.base_weights, head.base_weights.astype(np.float32))
    np.testing.assert_array_equal(back.adapter[0], head.adapter[0].astype(np.float32))
    np.testing.assert_array_equal(back.adapter[1], head.adapter[1].astype(np.float32))


def test_head_checkpoint_plain_and_corruption(tmp_path):
    rng = np.random.default_rng(8)
    head = random_head(rng)
    path = tmp_path / "head.sthd"
    write_head(head, path)
    assert read_head(path).adapter is None
    blob = path.read_bytes()
    (tmp_path / "trunc.sthd").write_bytes(blob[:-3])
    with pytest.raises(StoreFormatError):
        read_head(tmp_path / "trunc.sthd")
    (tmp_path / "trail.sthd").write_bytes(blob + b"\x00")
    with pytest.raises(StoreFormatError):
        read_head(tmp_path / "trail.sthd")
