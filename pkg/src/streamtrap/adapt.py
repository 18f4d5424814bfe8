"""Classifier-head training on frozen embeddings.

Heads score an embedding z with bias-free inner products eta = W z'. In
``linear_full`` mode the class weight matrix W (initialized from the text
head) is trained directly; in ``low_rank`` mode W stays frozen and a
residual low-rank transform of the embedding is learned instead:

    z' = z + B A z        B: d x r (zero-init), A: r x d (small uniform)

so the step-0 head is exactly the zero-shot head.

Losses are plain softmax cross-entropy and Balanced Softmax, which adds
log n_c to each class logit before the softmax (n_c = training count of
class c). Classes with zero training count are excluded from the Balanced
Softmax denominator and kept at inference. Optimization is AdamW with
decoupled weight decay and a cosine-annealed learning rate, deterministic
for a fixed seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import store as store_mod
from .store import DimensionMismatchError, StoreFormatError, TextHead

LOSS_CE = "ce"
LOSS_BSM = "bsm"
MODE_LINEAR = "linear_full"
MODE_LOW_RANK = "low_rank"


class ConfigurationError(ValueError):
    """Invalid training setup (unknown label, zero-count class, ...)."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class Provenance:
    camera_id: str
    trained_through_interval: int
    seed: int


@dataclass
class TrainConfig:
    """Optimizer and schedule settings (defaults follow the reference setup)."""

    max_lr: float = 2.5e-5
    min_lr: float = 4.17e-7
    weight_decay: float = 1e-4
    schedule_period: int = 60  # cosine annealing T_max, in epochs
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 10  # evaluations without improvement before stopping
    rank: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.min_lr <= self.max_lr):
            raise ConfigurationError("need 0 < min_lr <= max_lr")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class AdaptedHead:
    """Classifier state: weights, optional adapter, training provenance."""

    labels: list[str]
    base_weights: np.ndarray  # (C, d)
    adapter: tuple[np.ndarray, np.ndarray] | None = None  # (B d x r, A r x d)
    loss_kind: str = "none"
    class_counts: dict[str, int] = field(default_factory=dict)
    provenance: Provenance | None = None

    def __post_init__(self):
        self.base_weights = np.asarray(self.base_weights, dtype=np.float64)
        if self.adapter is not None:
            bmat, amat = self.adapter
            bmat = np.asarray(bmat, dtype=np.float64)
            amat = np.asarray(amat, dtype=np.float64)
            d = self.base_weights.shape[1]
            if bmat.shape[0] != d or amat.shape[1] != d or bmat.shape[1] != amat.shape[0]:
                raise ConfigurationError(
                    f"adapter shapes {bmat.shape}/{amat.shape} do not match d={d}"
                )
            if bmat.shape[1] > d:
                raise ConfigurationError("adapter rank exceeds embedding dim")
            self.adapter = (bmat, amat)
        if not np.all(np.isfinite(self.base_weights)):
            raise ConfigurationError("non-finite head weights")

    @property
    def dim(self) -> int:
        return int(self.base_weights.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.base_weights.shape[0])

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(f"label {label!r} not in head vocabulary") from None


def head_from_text(text_head: TextHead) -> AdaptedHead:
    """Zero-shot head: text embeddings as class weights, nothing trained."""
    return AdaptedHead(
        labels=list(text_head.labels),
        base_weights=text_head.vectors.astype(np.float64),
    )


def effective_weights(head: AdaptedHead) -> np.ndarray:
    """Materialize the adapter into a single (C, d) weight matrix."""
    if head.adapter is None:
        return head.base_weights.copy()
    bmat, amat = head.adapter
    d = head.dim
    return head.base_weights @ (np.eye(d) + bmat @ amat)


def _transform(head: AdaptedHead, z: np.ndarray) -> np.ndarray:
    if head.adapter is None:
        return z
    bmat, amat = head.adapter
    return z + (z @ amat.T) @ bmat.T


def logits(head: AdaptedHead, embedding: np.ndarray) -> np.ndarray:
    """Score vector(s) W z' for one embedding or a batch of rows."""
    z = np.asarray(embedding, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != head.dim:
        raise DimensionMismatchError(f"embedding dim {z.shape[1]} vs head dim {head.dim}")
    scores = _transform(head, z) @ head.base_weights.T
    return scores[0] if single else scores


def predict(head: AdaptedHead, embeddings: np.ndarray) -> list[str]:
    """Argmax labels for a batch; ties break toward the lowest label index."""
    scores = np.atleast_2d(logits(head, embeddings))
    return [head.labels[i] for i in np.argmax(scores, axis=1)]


def _log_count_adjustment(head: AdaptedHead) -> np.ndarray:
    adj = np.full(head.n_classes, -np.inf)
    for i, label in enumerate(head.labels):
        n = head.class_counts.get(label, 0)
        if n > 0:
            adj[i] = math.log(n)
    return adj


def _nll(adjusted: np.ndarray, y_idx: np.ndarray) -> np.ndarray:
    """Per-row negative log softmax at the true index, logsumexp-stabilized."""
    m = np.max(adjusted, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(adjusted - m), axis=1))
    return lse - adjusted[np.arange(adjusted.shape[0]), y_idx]


def bsm_loss(head: AdaptedHead, embedding: np.ndarray, label: str) -> float:
    """Balanced Softmax negative log-likelihood for one sample."""
    y = head.label_index(label)
    if head.class_counts.get(label, 0) <= 0:
        raise ConfigurationError(f"class {label!r} has zero training count under BSM")
    eta = np.atleast_2d(logits(head, embedding))
    adjusted = eta + _log_count_adjustment(head)[None, :]
    return float(_nll(adjusted, np.array([y]))[0])


def cross_entropy_loss(head: AdaptedHead, embedding: np.ndarray, label: str) -> float:
    """Standard softmax cross-entropy for one sample."""
    y = head.label_index(label)
    eta = np.atleast_2d(logits(head, embedding))
    return float(_nll(eta, np.array([y]))[0])


def loss_and_gradients(
    head: AdaptedHead,
    embeddings: np.ndarray,
    labels: Sequence[str],
    loss: str = LOSS_CE,
    mode: str = MODE_LINEAR,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and analytic gradients of the trainable parameters.

    ``mode`` selects the parameter set: gradient of W for ``linear_full``,
    gradients of (B, A) for ``low_rank``. The loss value itself is mode
    independent.
    """
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    y_idx = np.array([head.label_index(l) for l in labels])
    n = z.shape[0]

    if loss == LOSS_BSM:
        adj = _log_count_adjustment(head)
        for i in y_idx:
            if not np.isfinite(adj[i]):
                raise ConfigurationError(
                    f"class {head.labels[i]!r} has zero training count under BSM"
                )
    elif loss == LOSS_CE:
        adj = np.zeros(head.n_classes)
    else:
        raise ConfigurationError(f"unknown loss {loss!r}")

    z_prime = _transform(head, z)
    eta = z_prime @ head.base_weights.T
    adjusted = eta + adj[None, :]
    losses = _nll(adjusted, y_idx)
    value = float(np.mean(losses))

    m = np.max(adjusted, axis=1, keepdims=True)
    e = np.exp(adjusted - m)
    p = e / np.sum(e, axis=1, keepdims=True)
    g = p
    g[np.arange(n), y_idx] -= 1.0
    g /= n  # dL/d(eta), since the count adjustment is constant

    grads: dict[str, np.ndarray] = {}
    if mode == MODE_LINEAR:
        grads["W"] = g.T @ z_prime
    elif mode == MODE_LOW_RANK:
        if head.adapter is None:
            raise ConfigurationError("low_rank mode requires an adapter")
        bmat, amat = head.adapter
        d_zprime = g @ head.base_weights  # (n, d)
        u = z @ amat.T  # (n, r)
        grads["B"] = d_zprime.T @ u
        grads["A"] = bmat.T @ d_zprime.T @ z
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return value, grads


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Cosine-annealed learning rate for a 0-based epoch index."""
    t = min(epoch, config.schedule_period)
    return config.min_lr + 0.5 * (config.max_lr - config.min_lr) * (
        1.0 + math.cos(math.pi * t / config.schedule_period)
    )


class _AdamW:
    def __init__(self, shapes: Mapping[str, tuple], config: TrainConfig):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0
        self.config = config

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float):
        c = self.config
        self.t += 1
        for key, g in grads.items():
            p = params[key]
            p *= 1.0 - lr * c.weight_decay
            self.m[key] = c.beta1 * self.m[key] + (1 - c.beta1) * g
            self.v[key] = c.beta2 * self.v[key] + (1 - c.beta2) * g * g
            m_hat = self.m[key] / (1 - c.beta1**self.t)
            v_hat = self.v[key] / (1 - c.beta2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + c.eps)


def _balanced_accuracy_idx(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    recalls = []
    for cls in np.unique(y_true):
        mask = y_true == cls
        recalls.append(float(np.mean(y_pred[mask] == cls)))
    return float(np.mean(recalls))


def class_counts(labels: Sequence[str], vocabulary: Sequence[str]) -> dict[str, int]:
    counts = {c: 0 for c in vocabulary}
    for label in labels:
        if label not in counts:
            raise ConfigurationError(f"label {label!r} outside vocabulary")
        counts[label] += 1
    return counts


def train_head(
    train: tuple[np.ndarray, Sequence[str]],
    val: tuple[np.ndarray, Sequence[str]] | None,
    init_head: TextHead | AdaptedHead,
    config: TrainConfig,
    mode: str = MODE_LINEAR,
    loss: str = LOSS_BSM,
    provenance: Provenance | None = None,
) -> AdaptedHead:
    """Train a head on (embeddings, labels) with optional early stopping.

    The best checkpoint by validation balanced accuracy is returned; with an
    empty validation set the final-epoch parameters are returned instead.
    """
    if isinstance(init_head, TextHead):
        base = head_from_text(init_head)
    else:
        base = init_head
    train_z = np.atleast_2d(np.asarray(train[0], dtype=np.float64))
    train_labels = list(train[1])
    if train_z.shape[0] == 0:
        raise ConfigurationError("empty training set")
    if train_z.shape[0] != len(train_labels):
        raise ConfigurationError("embedding/label count mismatch")
    if train_z.shape[1] != base.dim:
        raise DimensionMismatchError(
            f"train dim {train_z.shape[1]} vs head dim {base.dim}"
        )

    counts = class_counts(train_labels, base.labels)
    rng = np.random.default_rng(config.seed)

    params: dict[str, np.ndarray] = {}
    if mode == MODE_LINEAR:
        params["W"] = effective_weights(base)  # materialized copy if warm-started
        work = AdaptedHead(
            labels=list(base.labels),
            base_weights=params["W"],  # aliased: optimizer updates show through
            loss_kind=loss,
            class_counts=dict(counts),
            provenance=provenance,
        )
    elif mode == MODE_LOW_RANK:
        r = min(config.rank, base.dim)
        if base.adapter is not None and base.adapter[0].shape[1] == r:
            # warm start: resume the previous adapter
            params["B"] = base.adapter[0].copy()
            params["A"] = base.adapter[1].copy()
        else:
            params["B"] = np.zeros((base.dim, r))
            params["A"] = rng.uniform(-1.0 / r, 1.0 / r, size=(r, base.dim))
        work = AdaptedHead(
            labels=list(base.labels),
            base_weights=base.base_weights.copy(),
            adapter=(params["B"], params["A"]),  # aliased
            loss_kind=loss,
            class_counts=dict(counts),
            provenance=provenance,
        )
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")

    def snapshot() -> AdaptedHead:
        return AdaptedHead(
            labels=list(work.labels),
            base_weights=work.base_weights.copy(),
            adapter=None
            if work.adapter is None
            else (work.adapter[0].copy(), work.adapter[1].copy()),
            loss_kind=loss,
            class_counts=dict(counts),
            provenance=provenance,
        )

    val_z = val_y = None
    if val is not None and len(val[1]) > 0:
        val_z = np.atleast_2d(np.asarray(val[0], dtype=np.float64))
        val_y = np.array([work.label_index(l) for l in val[1]])

    optimizer = _AdamW({k: p.shape for k, p in params.items()}, config)
    n = train_z.shape[0]
    best_score = -1.0
    best_params = None
    stale = 0

    for epoch in range(config.max_epochs):
        lr = cosine_lr(epoch, config)
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            value, grads = loss_and_gradients(
                work, train_z[idx], [train_labels[i] for i in idx], loss=loss, mode=mode
            )
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {lo // config.batch_size}"
                )
            optimizer.step(params, grads, lr)

        if val_z is not None:
            scores = np.atleast_2d(logits(work, val_z))
            pred = np.argmax(scores, axis=1)
            score = _balanced_accuracy_idx(val_y, pred)
            if score > best_score:
                best_score = score
                best_params = {k: p.copy() for k, p in params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if best_params is not None:
        for key in params:
            params[key][...] = best_params[key]
    return snapshot()


def make_validation(
    oracle_mode: bool,
    benchmark,
    j: int | None = None,
    seed: int = 0,
) -> list[str]:
    """Validation ids for early stopping.

    Oracle mode holds out two training images per class (sampled over the
    union of all train splits); otherwise the test split of interval ``j-1``
    is used, which is empty at ``j = 0``.
    """
    if oracle_mode:
        pool: dict[str, list[str]] = {}
        for interval in benchmark.intervals:
            if not interval.usable:
                continue
            for image_id in interval.train_ids:
                pool.setdefault(benchmark.labels[image_id], []).append(image_id)
        rng = np.random.default_rng(seed)
        held: list[str] = []
        for cls in sorted(pool):
            ids = sorted(pool[cls])
            take = min(2, len(ids))
            held.extend(ids[i] for i in rng.choice(len(ids), size=take, replace=False))
        return sorted(held)
    if j is None or j <= 0:
        return []
    prev = benchmark.intervals[j - 1]
    return list(prev.test_ids) if prev.usable else []


# --- head checkpoint container ("STHD1") ------------------------------------


def write_head(head: AdaptedHead, path) -> None:
    blob = store_mod._pack_payload(
        store_mod.MAGIC_HEAD,
        head.labels,
        head.base_weights.astype(np.float32),
        normalized=False,
    )
    extra = bytearray()
    if head.adapter is None:
        extra += struct.pack("<B", 0)
    else:
        bmat, amat = head.adapter
        extra += struct.pack("<BI", 1, bmat.shape[1])
        extra += np.ascontiguousarray(bmat, dtype="<f4").tobytes()
        extra += np.ascontiguousarray(amat, dtype="<f4").tobytes()
    for label in head.labels:
        extra += struct.pack("<I", int(head.class_counts.get(label, 0)))
    meta = {
        "loss_kind": head.loss_kind,
        "provenance": None
        if head.provenance is None
        else {
            "camera_id": head.provenance.camera_id,
            "trained_through_interval": head.provenance.trained_through_interval,
            "seed": head.provenance.seed,
        },
    }
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    extra += struct.pack("<I", len(raw)) + raw
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(bytes(extra))


def read_head(path) -> AdaptedHead:
    with open(path, "rb") as fh:
        reader = store_mod._Reader(fh.read(), path)
    labels, weights, _ = store_mod._unpack_payload(reader, store_mod.MAGIC_HEAD)
    c, d = weights.shape
    has_adapter = reader.u8()
    adapter = None
    if has_adapter:
        rank = reader.u32()
        braw = reader.take(d * rank * 4)
        araw = reader.take(rank * d * 4)
        bmat = np.frombuffer(braw, dtype="<f4").reshape(d, rank).astype(np.float64)
        amat = np.frombuffer(araw, dtype="<f4").reshape(rank, d).astype(np.float64)
        adapter = (bmat, amat)
    counts = {}
    for label in labels:
        counts[label] = reader.u32()
    meta_len = reader.u32()
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreFormatError(f"bad head metadata: {exc}") from exc
    if reader.pos != len(reader.blob):
        raise StoreFormatError(f"trailing bytes in {path}")
    prov = meta.get("provenance")
    return AdaptedHead(
        labels=labels,
        base_weights=weights.astype(np.float64),
        adapter=adapter,
        loss_kind=meta.get("loss_kind", "none"),
        class_counts=counts,
        provenance=None
        if prov is None
        else Provenance(
            camera_id=prov["camera_id"],
            trained_through_interval=prov["trained_through_interval"],
            seed=prov["seed"],
        ),
    )
