"""Mini-batch training with early stopping, evaluation and repeated selection."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ctranatd import metrics
from ctranatd.errors import DimensionError, EmptyDatasetError, NonFiniteError
from ctranatd.models import Model
from ctranatd.nn.ops import bce_loss
from ctranatd.nn.optim import Adam
from ctranatd.nn.tensor import RngState, Tensor3
from ctranatd.preprocess import WindowedDataset, stratified_split_indices

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 5
    validation_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def val_losses(self) -> list[float]:
        return [e.val_loss for e in self.epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.val_acc)])
        return buf.getvalue()


def split(dataset: WindowedDataset, fraction: float = 0.2, seed: int = 0) -> tuple[WindowedDataset, WindowedDataset]:
    """Stratified (train, validation) split holding out ``fraction`` of each class."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    keep, held = stratified_split_indices(dataset.labels, fraction, RngState(seed).derive("split"))
    return dataset.subset(keep), dataset.subset(held)


def _check_shape(model: Model, windows: np.ndarray) -> None:
    if windows.ndim != 3 or windows.shape[2] != model.config.in_features:
        raise DimensionError(
            f"windows of shape {windows.shape} do not match {model.config.in_features} model features",
            axis="feature",
        )


def _loss_and_acc(model: Model, ds: WindowedDataset) -> tuple[float, float]:
    scores = model.predict(ds.windows)
    loss, _ = bce_loss(scores, ds.labels)
    acc = float(np.mean((scores >= 0.5) == (ds.labels == 1)))
    return loss, acc


def train(model: Model, dataset: WindowedDataset, config: TrainConfig | None = None) -> tuple[Model, TrainReport]:
    """Fit ``model`` in place and return it with the per-epoch report.

    Validation windows are those flagged ``is_val`` by preprocessing, or a
    seeded stratified split when none are flagged.  Each epoch shuffles the
    training windows, runs Adam over batches (the
    last may be partial) with dropout on, then scores the validation split
    with dropout off.  Training stops after ``patience`` epochs without a
    lower validation loss and the best-validation parameters are restored.
    """
    config = config or TrainConfig()
    config.validate()
    if len(dataset) == 0:
        raise EmptyDatasetError("training set is empty")
    _check_shape(model, dataset.windows)
    if dataset.is_val.any():
        # preprocessing already held validation out of schema fitting
        train_ds = dataset.subset(np.nonzero(~dataset.is_val)[0])
        val_ds = dataset.subset(np.nonzero(dataset.is_val)[0])
    else:
        train_ds, val_ds = split(dataset, config.validation_fraction, config.seed)
    if len(val_ds) == 0 or len(train_ds) == 0:
        raise EmptyDatasetError("validation split left an empty partition")

    shuffle_rng = RngState(config.seed).derive("shuffle")
    opt = Adam(model.parameters(), lr=config.learning_rate)
    report = TrainReport()
    best_loss = math.inf
    best_state = model.state_arrays()
    stale = 0
    n = len(train_ds)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            scores = model.forward(Tensor3(train_ds.windows[idx]), training=True)
            loss, grad = bce_loss(scores.data, train_ds.labels[idx])
            if not math.isfinite(loss):
                model.load_arrays(best_state)
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}; restored last good parameters")
            scores.backward(grad)
            try:
                opt.step()
            except NonFiniteError:
                model.load_arrays(best_state)
                raise
            total += loss * len(idx)
        val_loss, val_acc = _loss_and_acc(model, val_ds)
        stats = EpochStats(epoch, total / n, val_loss, val_acc, time.perf_counter() - t0)
        report.epochs.append(stats)
        log.info("epoch %d train_loss=%.6f val_loss=%.6f val_acc=%.4f", epoch, stats.train_loss, val_loss, val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = model.state_arrays()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    report.stopped_epoch = len(report.epochs)
    model.load_arrays(best_state)
    return model, report


def evaluate(model: Model, dataset: WindowedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (dropout-free) scores paired with ground-truth labels."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    _check_shape(model, dataset.windows)
    return model.predict(dataset.windows), dataset.labels.copy()


METRIC_KEYS = ("accuracy", "recall", "precision", "f1", "auc")


def selection_indices(labels: np.ndarray, fraction: float, rng: RngState) -> np.ndarray:
    """Stratified subsample without replacement; every present class keeps at least one."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("selection fraction must be in (0, 1]")
    picked = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        k = max(1, int(round(fraction * len(idx))))
        picked.append(np.sort(rng.choice(idx, size=k, replace=False)))
    return np.sort(np.concatenate(picked))


@dataclass
class RepeatedMetrics:
    rows: list[dict[str, float]]

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(np.nanmean([r[k] for r in self.rows])) for k in METRIC_KEYS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", *METRIC_KEYS])
        for i, r in enumerate(self.rows):
            w.writerow([i, *(repr(float(r[k])) for k in METRIC_KEYS)])
        m = self.mean
        w.writerow(["mean", *(repr(m[k]) for k in METRIC_KEYS)])
        return buf.getvalue()


def repeated_selection(
    scores: np.ndarray,
    labels: np.ndarray,
    reps: int = 100,
    fraction: float = 0.8,
    seed: int = 0,
    threshold: float = 0.5,
) -> RepeatedMetrics:
    """Average metrics over ``reps`` seeded stratified re-selections of the evaluation set."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise EmptyDatasetError("no scores to evaluate")
    rng = RngState(seed).derive("eval.selection")
    rows = []
    for _ in range(reps):
        idx = selection_indices(labels, fraction, rng) if fraction < 1.0 else np.arange(len(labels))
        rows.append(metrics.summarize(scores[idx], labels[idx], threshold))
    return RepeatedMetrics(rows)
