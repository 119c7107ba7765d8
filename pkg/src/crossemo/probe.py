"""Linear emotion probe: softmax cross-entropy, AdamW, training loop, metrics.

The same trainer drives standalone layerwise probing and every adaptation
approach: it runs full epochs of shuffled minibatches, evaluates unweighted
accuracy (UA, the macro average of per-class recalls) on the validation set
after each epoch, and returns the snapshot with the best validation UA
(earliest epoch wins ties). Training is a pure function of (data, config,
seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DataValidationError,
    DimensionMismatchError,
    InsufficientDataError,
)
from .numerics import derive_rng, derive_seed, log_softmax, softmax
from .pooling import pool_record
from .store import EMOTIONS

NUM_CLASSES = len(EMOTIONS)

TASKS = ("SER", "MER")
TASK_DOMAIN = {"SER": "speech", "MER": "music"}


# ---------------------------------------------------------------------------
# Parameters and configuration
# ---------------------------------------------------------------------------


@dataclass
class ProbeParams:
    W: np.ndarray  # (C, D)
    b: np.ndarray  # (C,)

    @classmethod
    def zeros(cls, dim: int, num_classes: int = NUM_CLASSES) -> "ProbeParams":
        # Softmax regression on frozen features is convex; zero init is
        # deterministic and sufficient.
        return cls(W=np.zeros((num_classes, dim)), b=np.zeros(num_classes))

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ProbeParams":
        return ProbeParams(W=self.W.copy(), b=self.b.copy())

    def trainable(self) -> dict[str, np.ndarray]:
        return {"probe.W": self.W, "probe.b": self.b}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 32
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class MetricsReport:
    """UA, per-class recall, and confusion counts for one evaluation."""

    ua: float
    per_class_recall: np.ndarray  # (6,), NaN for classes absent from the set
    confusion: np.ndarray  # (6, 6) counts, rows = true class
    epoch_of_best: int = 0

    def to_dict(self) -> dict:
        recalls = [
            None if np.isnan(r) else float(r) for r in self.per_class_recall
        ]
        return {
            "ua": float(self.ua),
            "per_class_recall": dict(zip(EMOTIONS, recalls)),
            "confusion": self.confusion.astype(int).tolist(),
            "epoch_of_best": int(self.epoch_of_best),
        }


# ---------------------------------------------------------------------------
# Loss and metrics
# ---------------------------------------------------------------------------


def _check_batch(params: ProbeParams, features: np.ndarray, labels: np.ndarray):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] != params.dim:
        raise DimensionMismatchError(
            f"features {features.shape} do not match probe dim {params.dim}"
        )
    if labels.shape != (features.shape[0],):
        raise DimensionMismatchError("labels must be one per feature row")
    if labels.size and (labels.min() < 0 or labels.max() >= params.W.shape[0]):
        raise DataValidationError(
            f"labels must be in [0, {params.W.shape[0]}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return features, labels.astype(np.int64)


def forward_loss(
    params: ProbeParams, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and the (N, C) logits."""
    features, labels = _check_batch(params, features, labels)
    if features.shape[0] == 0:
        raise InsufficientDataError("empty batch")
    logits = features @ params.W.T + params.b
    logp = log_softmax(logits, axis=1)
    loss = -float(logp[np.arange(labels.size), labels].mean())
    return loss, logits


def loss_and_grads(
    params: ProbeParams, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Loss, logits, and exact gradients w.r.t. W and b."""
    loss, logits = forward_loss(params, features, labels)
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    dlogits = softmax(logits, axis=1)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, logits, {"probe.W": dlogits.T @ features, "probe.b": dlogits.sum(axis=0)}


def metrics_from_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> MetricsReport:
    """Confusion matrix, per-class recall, and UA over classes present."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise DataValidationError("need equal-length, non-empty label arrays")
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        recall = np.where(support > 0, np.diag(confusion) / support, np.nan)
    ua = float(np.nanmean(recall))
    return MetricsReport(ua=ua, per_class_recall=recall, confusion=confusion)


def evaluate(
    params: ProbeParams, features: np.ndarray, labels: np.ndarray
) -> MetricsReport:
    """Argmax classification of a test set."""
    features, labels = _check_batch(params, features, labels)
    if features.shape[0] == 0:
        raise InsufficientDataError("empty evaluation set")
    logits = features @ params.W.T + params.b
    return metrics_from_predictions(labels, logits.argmax(axis=1))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Bias-corrected Adam with decoupled weight decay over named arrays.

    Decay shrinks parameters by lr * weight_decay before the Adam delta is
    applied; moments never see the decay term. A non-finite gradient aborts
    the step with parameters and state untouched.
    """

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if set(grads) != set(self.params):
            raise ConfigError(
                f"gradient keys {sorted(grads)} do not match parameters "
                f"{sorted(self.params)}"
            )
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise DimensionMismatchError(f"gradient '{name}' has wrong shape")
            if not np.all(np.isfinite(g)):
                raise DataValidationError(f"non-finite gradient for '{name}'")

        cfg = self.config
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - cfg.beta1**t
        bias2 = 1.0 - cfg.beta2**t
        for name, g in grads.items():
            theta = self.params[name]
            if cfg.weight_decay:
                theta *= 1.0 - cfg.learning_rate * cfg.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * np.square(g)
            theta -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.epsilon)


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    optimizer: AdamW | None,
    config: TrainConfig,
) -> AdamW:
    """Single-step functional wrapper; returns the (possibly new) optimizer state."""
    if optimizer is None:
        optimizer = AdamW(params, config)
    optimizer.step(grads)
    return optimizer


# ---------------------------------------------------------------------------
# Generic training loop
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    """Best-epoch validation report plus the full per-epoch UA trace."""

    report: MetricsReport
    epoch_val_uas: list[float] = field(default_factory=list)


def fit_model(model, config: TrainConfig, train_idx, val_idx) -> FitResult:
    """Train any model exposing the four-method contract and keep the best epoch.

    ``model`` must provide parameters() -> dict of arrays (updated in place),
    loss_and_grads(indices), predict(indices), and targets(indices). After
    fitting, the model's parameters hold the best-validation-UA snapshot.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise InsufficientDataError("training split is empty")
    if val_idx.size == 0:
        raise InsufficientDataError("validation split is empty")
    train_classes = set(np.unique(model.targets(train_idx)).tolist())
    missing = [EMOTIONS[c] for c in range(NUM_CLASSES) if c not in train_classes]
    if missing:
        raise DataValidationError(f"classes missing from training split: {missing}")

    params = model.parameters()
    optimizer = AdamW(params, config)
    rng = derive_rng(config.seed, "shuffle")
    val_targets = model.targets(val_idx)

    best_ua = -np.inf
    best_snapshot: dict[str, np.ndarray] = {}
    best_report: MetricsReport | None = None
    best_epoch = 0
    epoch_uas: list[float] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx.size)
        for start in range(0, train_idx.size, config.batch_size):
            batch = train_idx[order[start : start + config.batch_size]]
            _, grads = model.loss_and_grads(batch)
            optimizer.step(grads)
        report = metrics_from_predictions(val_targets, model.predict(val_idx))
        epoch_uas.append(report.ua)
        if report.ua > best_ua:
            best_ua = report.ua
            best_snapshot = {k: v.copy() for k, v in params.items()}
            best_report = report
            best_epoch = epoch

    for name, value in best_snapshot.items():
        params[name][...] = value
    best_report.epoch_of_best = best_epoch
    return FitResult(report=best_report, epoch_val_uas=epoch_uas)


class _LinearModel:
    """fit_model adapter for a bare linear probe over fixed features."""

    def __init__(self, params: ProbeParams, features: np.ndarray, labels: np.ndarray):
        self.probe = params
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)

    def parameters(self) -> dict[str, np.ndarray]:
        return self.probe.trainable()

    def loss_and_grads(self, idx):
        loss, _, grads = loss_and_grads(
            self.probe, self.features[idx], self.labels[idx]
        )
        return loss, grads

    def predict(self, idx):
        logits = self.features[idx] @ self.probe.W.T + self.probe.b
        return logits.argmax(axis=1)

    def targets(self, idx):
        return self.labels[idx]


@dataclass
class TrainProbeResult:
    params: ProbeParams
    report: MetricsReport
    epoch_val_uas: list[float]


def train_probe(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    config: TrainConfig,
) -> TrainProbeResult:
    """Train a linear probe and return the best-validation-UA snapshot."""
    if np.asarray(train_features).shape[0] == 0:
        raise InsufficientDataError("training split is empty")
    dim = np.asarray(train_features).shape[1]
    if np.asarray(val_features).ndim != 2 or np.asarray(val_features).shape[1] != dim:
        raise DimensionMismatchError("train/val feature dims disagree")
    probe = ProbeParams.zeros(dim)
    features = np.concatenate(
        [np.asarray(train_features, dtype=np.float64),
         np.asarray(val_features, dtype=np.float64)]
    )
    labels = np.concatenate(
        [np.asarray(train_labels, dtype=np.int64),
         np.asarray(val_labels, dtype=np.int64)]
    )
    n_train = np.asarray(train_features).shape[0]
    model = _LinearModel(probe, features, labels)
    result = fit_model(
        model, config, np.arange(n_train), np.arange(n_train, labels.size)
    )
    return TrainProbeResult(
        params=probe, report=result.report, epoch_val_uas=result.epoch_val_uas
    )


# ---------------------------------------------------------------------------
# Layerwise sweep
# ---------------------------------------------------------------------------


@dataclass
class LayerProbeRow:
    layer: int  # 1-based
    val_ua: float
    test_ua: float
    per_class_recall: np.ndarray  # test-set recalls, (6,)
    epoch_of_best: int


def task_features(records, manifest, task: str):
    """Time-pooled features and split indices for one task's domain.

    Returns (features (N, L, D), labels (N,), splits: name -> index array).
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task '{task}'; choose from {TASKS}")
    domain = TASK_DOMAIN[task]
    subset = [r for r in records if r.domain == domain]
    if not subset:
        raise DataValidationError(f"no records for domain '{domain}'")
    subset.sort(key=lambda r: r.utterance_id)
    features = np.stack([pool_record(r.layers) for r in subset])
    labels = np.array([EMOTIONS.index(r.emotion) for r in subset], dtype=np.int64)
    splits = {}
    for name in ("train", "val", "test"):
        ids = set(manifest.ids(name, domain=domain))
        splits[name] = np.array(
            [i for i, r in enumerate(subset) if r.utterance_id in ids],
            dtype=np.int64,
        )
        if splits[name].size == 0:
            raise DataValidationError(f"no {domain} records in split '{name}'")
    return features, labels, splits


def layerwise_probe_sweep(
    records, manifest, task: str, config: TrainConfig
) -> list[LayerProbeRow]:
    """One independent probe per layer; rows mirror the layerwise figures.

    Each layer gets its own seed derived from (config.seed, task, layer), so
    rows are reproducible independently of sweep order.
    """
    features, labels, splits = task_features(records, manifest, task)
    rows = []
    for layer in range(features.shape[1]):
        layer_config = replace(config, seed=derive_seed(config.seed, task, layer))
        result = train_probe(
            features[splits["train"], layer],
            labels[splits["train"]],
            features[splits["val"], layer],
            labels[splits["val"]],
            layer_config,
        )
        test_report = evaluate(
            result.params, features[splits["test"], layer], labels[splits["test"]]
        )
        rows.append(
            LayerProbeRow(
                layer=layer + 1,
                val_ua=result.report.ua,
                test_ua=test_report.ua,
                per_class_recall=test_report.per_class_recall,
                epoch_of_best=result.report.epoch_of_best,
            )
        )
    return rows
