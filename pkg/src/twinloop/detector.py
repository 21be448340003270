"""Temporal neural event detector: convolution -> recurrence -> attention ->
sigmoid head, with training, evaluation metrics, and feature importance."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit as sigmoid

from . import nn
from .datagen import Dataset
from .pipeline import FEATURE_ORDER, WindowBatch, normalize, window

CHECKPOINT_MAGIC = b"TWLDET01"


@dataclass
class DetectorSpec:
    conv_filters: tuple[int, int] = (64, 128)
    kernel_size: int = 3
    pool_size: int = 2
    recurrent_units: tuple[int, int] = (100, 50)
    attention: bool = True
    attention_dim: int = 64
    dense_units: int = 64
    dropout: float = 0.3

    def validate(self) -> None:
        sizes = (*self.conv_filters, *self.recurrent_units, self.attention_dim,
                 self.dense_units, self.kernel_size, self.pool_size)
        if any(s <= 0 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "conv_filters": list(self.conv_filters),
            "kernel_size": self.kernel_size,
            "pool_size": self.pool_size,
            "recurrent_units": list(self.recurrent_units),
            "attention": self.attention,
            "attention_dim": self.attention_dim,
            "dense_units": self.dense_units,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorSpec":
        return cls(
            conv_filters=tuple(data["conv_filters"]),
            kernel_size=data["kernel_size"],
            pool_size=data["pool_size"],
            recurrent_units=tuple(data["recurrent_units"]),
            attention=data["attention"],
            attention_dim=data["attention_dim"],
            dense_units=data["dense_units"],
            dropout=data["dropout"],
        )

    @classmethod
    def tiny(cls) -> "DetectorSpec":
        """Reduced architecture for gradient checks and fast tests."""
        return cls(
            conv_filters=(2, 2),
            recurrent_units=(3, 3),
            attention_dim=3,
            dense_units=3,
            dropout=0.0,
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    early_stop_patience: int = 10
    # None selects inverse-frequency weighting; pass an explicit map such as
    # {0: 64.7, 1: 0.5} to reproduce a fixed weighting scheme.
    class_weights: dict[int, float] | None = None
    # Gaussian input jitter applied to training windows each epoch; combats
    # memorization of the handful of event episodes in a 5k-sample dataset.
    noise_sigma: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("batch size and epochs must be positive")


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    confusion: dict[str, int]
    pr_curve: list[tuple[float, float, float]]
    feature_importance: dict[str, float] = field(default_factory=dict)
    attention_stats: dict[str, float] | None = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "confusion": dict(self.confusion),
            "pr_curve": [list(p) for p in self.pr_curve],
            "feature_importance": dict(self.feature_importance),
        }
        if self.attention_stats is not None:
            out["attention_stats"] = dict(self.attention_stats)
        return out


class DetectorModel:
    """Layered temporal network over [batch, time_steps, features] windows."""

    def __init__(
        self,
        spec: DetectorSpec,
        input_shape: tuple[int, int],
        seed: int = 0,
        threshold: float = 0.5,
    ) -> None:
        spec.validate()
        time_steps, features = input_shape
        if time_steps // spec.pool_size < 1:
            raise ValueError("input time dimension too small for pooling")
        if not 0.0 < threshold < 1.0:
            raise ValueError("decision threshold must lie in (0, 1)")
        self.spec = spec
        self.input_shape = (int(time_steps), int(features))
        self.seed = seed
        self.threshold = threshold
        self.trained_epochs = 0

        rng = np.random.default_rng(seed)
        store = nn.ParamStore()
        c1, c2 = spec.conv_filters
        r1, r2 = spec.recurrent_units
        self.conv1 = nn.Conv1D(store, "conv1", features, c1, spec.kernel_size, rng)
        self.bn1 = nn.BatchNorm(store, "bn1", c1)
        self.act1 = nn.ReLU()
        self.conv2 = nn.Conv1D(store, "conv2", c1, c2, spec.kernel_size, rng)
        self.bn2 = nn.BatchNorm(store, "bn2", c2)
        self.act2 = nn.ReLU()
        self.pool = nn.MaxPool1D(spec.pool_size)
        self.lstm1 = nn.LSTM(store, "lstm1", c2, r1, rng)
        self.lstm2 = nn.LSTM(store, "lstm2", r1, r2, rng)
        if spec.attention:
            self.attend = nn.AdditiveAttention(store, "attn", r2, spec.attention_dim, rng)
        else:
            self.attend = nn.MeanPoolTime()
        self.dense = nn.Dense(store, "dense", r2, spec.dense_units, rng)
        self.act3 = nn.ReLU()
        self.dropout = nn.Dropout(spec.dropout, np.random.default_rng(seed + 1))
        self.head = nn.Dense(store, "head", spec.dense_units, 1, rng)
        store.finalize()
        self.store = store
        self._chain = [
            self.conv1, self.bn1, self.act1,
            self.conv2, self.bn2, self.act2,
            self.pool, self.lstm1, self.lstm2,
            self.attend, self.dense, self.act3,
            self.dropout, self.head,
        ]

    @property
    def param_count(self) -> int:
        return self.store.size

    @property
    def weights(self) -> np.ndarray:
        return self.store.vector

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = x
        for layer in self._chain:
            out = layer.forward(out, training=training)
        return out[:, 0]

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        grad = dlogits[:, None]
        for layer in reversed(self._chain):
            grad = layer.backward(grad)
        return grad

    def loss_and_grads(
        self, x: np.ndarray, y: np.ndarray, sample_weights: np.ndarray, training: bool = True
    ) -> float:
        self.store.zero_grads()
        logits = self.forward(x, training=training)
        loss, dz = nn.weighted_bce_with_logits(logits, y.astype(float), sample_weights)
        self.backward(dz)
        return loss

    def predict(self, batch: WindowBatch | np.ndarray, chunk: int = 512) -> np.ndarray:
        x = batch.windows if isinstance(batch, WindowBatch) else np.asarray(batch)
        self._check_features(x)
        probs = np.empty(x.shape[0])
        for start in range(0, x.shape[0], chunk):
            logits = self.forward(x[start : start + chunk], training=False)
            probs[start : start + chunk] = sigmoid(logits)
        return probs

    def attention_weights(self, x: np.ndarray) -> np.ndarray:
        if not self.spec.attention:
            raise ValueError("model built without attention")
        self.forward(np.asarray(x), training=False)
        return self.attend.last_weights

    def input_gradients(self, x: np.ndarray) -> np.ndarray:
        """d probability / d input, evaluated in inference mode."""
        x = np.asarray(x)
        self._check_features(x)
        self.store.zero_grads()
        logits = self.forward(x, training=False)
        p = sigmoid(logits)
        return self.backward(p * (1.0 - p))

    def _check_features(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise ValueError(
                f"expected windows of shape (*, {self.input_shape[0]}, "
                f"{self.input_shape[1]}), got {x.shape}"
            )

    def calibrate_normalization(self, windows: np.ndarray, chunk: int = 512) -> None:
        """Replace the EMA batch-norm statistics with exact statistics of the
        given (training) windows under the current weights.

        The 0.99-momentum running averages converge over ~hundreds of steps;
        when early stopping restores an early epoch, its EMA snapshot is still
        dominated by the initialization, which skews every inference.  This
        recomputes each normalization layer's statistics layer by layer, in
        inference mode, so they are an exact function of the final weights.
        """
        x = np.asarray(windows)

        def full_output(layers) -> np.ndarray:
            outs = []
            for start in range(0, x.shape[0], chunk):
                out = x[start : start + chunk]
                for layer in layers:
                    out = layer.forward(out, training=False)
                outs.append(out)
            return np.concatenate(outs)

        pre_bn1 = full_output([self.conv1])
        self.bn1.running_mean = pre_bn1.mean(axis=(0, 1))
        self.bn1.running_var = pre_bn1.var(axis=(0, 1))
        pre_bn2 = full_output([self.conv1, self.bn1, self.act1, self.conv2])
        self.bn2.running_mean = pre_bn2.mean(axis=(0, 1))
        self.bn2.running_var = pre_bn2.var(axis=(0, 1))

    def _bn_state(self) -> np.ndarray:
        return np.concatenate(
            [self.bn1.running_mean, self.bn1.running_var,
             self.bn2.running_mean, self.bn2.running_var]
        )

    def _set_bn_state(self, state: np.ndarray) -> None:
        c1, c2 = self.spec.conv_filters
        parts = np.split(state, [c1, 2 * c1, 2 * c1 + c2])
        self.bn1.running_mean, self.bn1.running_var = parts[0], parts[1]
        self.bn2.running_mean, self.bn2.running_var = parts[2], parts[3]

    def save(self, path: str | Path) -> None:
        meta = {
            "spec": self.spec.to_dict(),
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "threshold": self.threshold,
            "trained_epochs": self.trained_epochs,
            "param_count": self.param_count,
            "layout": {
                name: [start, stop, list(shape)]
                for name, (start, stop, shape) in self.store.layout().items()
            },
        }
        nn.write_checkpoint(
            path, CHECKPOINT_MAGIC, meta,
            {"params": self.store.vector, "bn_state": self._bn_state()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "DetectorModel":
        meta, arrays = nn.read_checkpoint(path, CHECKPOINT_MAGIC)
        model = cls(
            DetectorSpec.from_dict(meta["spec"]),
            tuple(meta["input_shape"]),
            seed=meta["seed"],
            threshold=meta["threshold"],
        )
        model.store.set_vector(arrays["params"])
        model._set_bn_state(arrays["bn_state"])
        model.trained_epochs = meta["trained_epochs"]
        return model


def build(
    spec: DetectorSpec, input_shape: tuple[int, int], seed: int = 0
) -> DetectorModel:
    return DetectorModel(spec, input_shape, seed=seed)


def class_weight_map(labels: np.ndarray) -> dict[int, float]:
    """Inverse-frequency (balanced) class weights."""
    n = labels.shape[0]
    weights = {}
    for cls in (0, 1):
        count = int(np.sum(labels == cls))
        weights[cls] = n / (2.0 * count) if count else 1.0
    return weights


def _sample_weights(labels: np.ndarray, weights: dict[int, float]) -> np.ndarray:
    return np.where(labels == 1, weights.get(1, 1.0), weights.get(0, 1.0)).astype(float)


def _epoch_metrics(model: DetectorModel, batch: WindowBatch, weights: dict[int, float] | None = None):
    """Monitoring loss and accuracy for epoch ranking.

    The monitor is the unweighted cross-entropy with clipped probabilities:
    class weights steer the training gradient, but as a model-ranking signal
    they reward indecision (they amplify exactly the ambiguous boundary
    windows that the any-event-row labeling makes unlearnable), and unclipped
    log-loss lets a handful of those windows dominate the ranking.
    """
    probs = model.predict(batch)
    y = batch.labels.astype(float)
    p = np.clip(probs, 1e-3, 1 - 1e-3)
    loss = float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))
    acc = float(np.mean((probs > model.threshold) == batch.labels.astype(bool)))
    return loss, acc


def train(
    model: DetectorModel,
    train_batch: WindowBatch,
    val_batch: WindowBatch,
    cfg: TrainConfig,
    sample_boost: np.ndarray | None = None,
) -> tuple[DetectorModel, list[dict[str, float]]]:
    """Minimize class-weighted binary cross-entropy with Adam and early
    stopping; the best-validation weights are restored.

    sample_boost optionally multiplies individual training-window weights
    (the symbolic layer uses this to emphasize rule-certified patterns).
    """
    cfg.validate()
    if len(train_batch) == 0 or len(val_batch) == 0:
        raise ValueError("training and validation batches must be non-empty")
    if train_batch.n_features != model.input_shape[1]:
        raise ValueError("feature dimension mismatch")
    if sample_boost is not None and sample_boost.shape[0] != len(train_batch):
        raise ValueError("sample_boost must align with the training batch")
    classes = np.unique(train_batch.labels)
    if classes.size < 2:
        warnings.warn("training set contains a single class; proceeding anyway")
    weights = cfg.class_weights if cfg.class_weights is not None else class_weight_map(
        train_batch.labels
    )

    rng = np.random.default_rng(cfg.seed)
    model.dropout.rng = np.random.default_rng(cfg.seed + 17)
    optimizer = nn.Adam(model.store, lr=cfg.learning_rate)
    history: list[dict[str, float]] = []
    best_loss = np.inf
    best_acc = -1.0
    best_vector = model.store.get_vector()
    best_bn = model._bn_state()
    best_epoch = 0
    since_best = 0

    n = len(train_batch)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = train_batch.windows[idx]
            if cfg.noise_sigma > 0:
                x = x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)
            y = train_batch.labels[idx].astype(float)
            w = _sample_weights(train_batch.labels[idx], weights)
            if sample_boost is not None:
                w = w * sample_boost[idx]
            loss = model.loss_and_grads(x, y, w, training=True)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}; aborting "
                    "(inspect learning rate and input scaling)"
                )
            optimizer.step()
            epoch_loss += loss * len(idx)
        model.calibrate_normalization(train_batch.windows)
        train_loss, train_acc = _epoch_metrics(model, train_batch)
        val_loss, val_acc = _epoch_metrics(model, val_batch)
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "train_acc": train_acc,
                "val_acc": val_acc,
            }
        )
        # Epoch selection tracks validation accuracy (loss as tie-break):
        # under any-event-row labeling a slice of windows is irreducibly
        # ambiguous, and their log-loss contribution otherwise drags the
        # selection toward early, underconfident epochs.
        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best_acc = val_acc
            best_loss = val_loss
            best_vector = model.store.get_vector()
            best_bn = model._bn_state()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break

    model.store.set_vector(best_vector)
    model._set_bn_state(best_bn)
    model.trained_epochs = best_epoch
    return model, history


def calibrate_threshold(model: DetectorModel, batch: WindowBatch) -> float:
    """Pick the decision cutoff maximizing F1 on a held-out batch.

    Class-weighted training inflates the head's probabilities (it learns the
    reweighted posterior), so the default 0.5 cutoff over-fires; selecting the
    operating point on validation restores the intended precision/recall
    balance.
    """
    probs = model.predict(batch)
    labels = batch.labels.astype(np.int64)
    best_thr, best_f1 = model.threshold, -1.0
    for precision, recall, thr in pr_curve(labels, probs):
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if f1 > best_f1 and 0.0 < thr < 1.0:
            best_f1, best_thr = f1, thr
    # The cutoff is strict (score > threshold), so step just below the chosen
    # score to keep it included.
    return float(np.nextafter(best_thr, 0.0))


def export_history_csv(history: Sequence[dict[str, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        for row in history:
            writer.writerow(
                [row["epoch"], row["train_loss"], row["val_loss"],
                 row["train_acc"], row["val_acc"]]
            )


def predict(model: DetectorModel, batch: WindowBatch) -> np.ndarray:
    return model.predict(batch)


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve by the trapezoidal rule."""
    pos = int(labels.sum())
    neg = labels.shape[0] - pos
    if pos == 0 or neg == 0:
        return 0.5
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    tps = np.cumsum(sorted_labels)
    fps = np.cumsum(1 - sorted_labels)
    # Collapse tied scores to single operating points.
    distinct = np.flatnonzero(np.diff(sorted_scores)) if labels.shape[0] > 1 else np.array([])
    keep = np.r_[distinct, labels.shape[0] - 1]
    tpr = np.r_[0.0, tps[keep] / pos]
    fpr = np.r_[0.0, fps[keep] / neg]
    return float(np.trapezoid(tpr, fpr))


def pr_curve(labels: np.ndarray, scores: np.ndarray) -> list[tuple[float, float, float]]:
    """(precision, recall, threshold) at each distinct score, ascending.

    Predictions use score >= threshold; with no predicted positives the
    precision is 1.0 by convention.
    """
    points = []
    pos = int(labels.sum())
    for thr in np.unique(scores):
        preds = scores >= thr
        tp = int(np.sum(preds & (labels == 1)))
        fp = int(np.sum(preds & (labels == 0)))
        precision = tp / (tp + fp) if (tp + fp) else 1.0
        recall = tp / pos if pos else 0.0
        points.append((float(precision), float(recall), float(thr)))
    return points


def evaluate(
    model: DetectorModel, test: WindowBatch, threshold: float | None = None
) -> EvalReport:
    """Thresholded classification metrics plus curves over the score sweep."""
    if len(test) == 0:
        raise ValueError("test batch must be non-empty")
    thr = model.threshold if threshold is None else threshold
    probs = model.predict(test)
    labels = test.labels.astype(np.int64)
    preds = probs > thr
    tp = int(np.sum(preds & (labels == 1)))
    tn = int(np.sum(~preds & (labels == 0)))
    fp = int(np.sum(preds & (labels == 0)))
    fn = int(np.sum(~preds & (labels == 1)))
    total = tp + tn + fp + fn
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    report = EvalReport(
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        roc_auc=roc_auc(labels, probs),
        confusion={"tn": tn, "fp": fp, "fn": fn, "tp": tp},
        pr_curve=pr_curve(labels, probs),
    )
    if model.spec.attention:
        alpha = model.attention_weights(test.windows[: min(len(test), 256)])
        report.attention_stats = {
            "mean_max_weight": float(alpha.max(axis=1).mean()),
            "mean_entropy": float(-(alpha * np.log(alpha + 1e-12)).sum(axis=1).mean()),
        }
    return report


def feature_importance(model: DetectorModel, batch: WindowBatch) -> dict[str, float]:
    """Mean absolute gradient of the output probability w.r.t. each input
    feature, averaged over batch and time; reported unnormalized."""
    grads = model.input_gradients(batch.windows)
    scores = np.abs(grads).mean(axis=(0, 1))
    return {name: float(scores[i]) for i, name in enumerate(batch.feature_order)}


def walk_forward_eval(
    d: Dataset,
    folds: int,
    cfg: TrainConfig,
    spec: DetectorSpec | None = None,
    time_steps: int = 10,
    stride: int = 1,
    rolling_window: int = 100,
    seed: int = 0,
) -> list[EvalReport]:
    """Expanding-window evaluation: fold k trains on all data before cut k and
    scores the following block, so no fold sees its own future."""
    if folds < 2:
        raise ValueError("walk-forward evaluation needs at least 2 folds")
    n = len(d)
    block = n // (folds + 1)
    if block < time_steps * 2:
        raise ValueError("dataset too small for requested folds")
    spec = spec or DetectorSpec.tiny()
    normalized = normalize(d, window=rolling_window)  # trailing stats: causal
    reports = []
    for k in range(1, folds + 1):
        cut = block * k
        end = block * (k + 1) if k < folds else n
        train_batch = window(normalized.take(slice(0, cut)), time_steps, stride)
        test_batch = window(normalized.take(slice(cut, end)), time_steps, stride)
        model = DetectorModel(spec, (time_steps, train_batch.n_features), seed=seed)
        # Hold out the training tail as the early-stopping reference.
        split_at = max(1, int(len(train_batch) * 0.8))
        tb = WindowBatch(train_batch.windows[:split_at], train_batch.labels[:split_at])
        vb = WindowBatch(train_batch.windows[split_at:], train_batch.labels[split_at:])
        model, _ = train(model, tb, vb, cfg)
        reports.append(evaluate(model, test_batch))
    return reports
