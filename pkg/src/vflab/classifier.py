"""Linear probing and cross-validated evaluation.

The probe is a multinomial logistic regression trained with the same
Adam loop as every other model in the package (softmax cross-entropy,
no regularization), which keeps results deterministic given a seed.
Reports follow the mean-of-means convention: k-fold scores are averaged
per run, then the run means are averaged and their standard deviation
is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .nn.layers import ACT_IDENTITY, build_mlp, repack_into_flat
from .nn.optim import FlatAdam
from .nn.train import TrainConfig, train
from .validation import as_matrix, check_consistent_rows, check_is_fitted

METRIC_KEYS = ("accuracy", "f1_micro", "f1_macro", "f1_weighted")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_grad(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), y], dtype=np.float64))
    grad = softmax(logits)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return loss, grad


class LogisticRegressionProbe:
    """Multinomial logistic regression on frozen representations.

    Softmax cross-entropy minimized with Adam over mini-batches, up to
    `max_epochs` epochs (lr=0.01 converges to the unregularized optimum
    on standardized inputs within the cap). Early stopping only happens
    when a validation split is passed to fit(); inside cross-validation
    folds the probe runs the fixed epoch cap.
    """

    def __init__(self, max_epochs=200, batch_size=128, lr=1e-2, seed=0, patience=10):
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.patience = patience

    def get_params(self, deep=True):
        return {
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "patience": self.patience,
        }

    def set_params(self, **kw):
        for k, v in kw.items():
            if k not in self.get_params():
                raise ConfigError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, x, y, x_val=None, y_val=None):
        x = as_matrix(x, "x", dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        check_consistent_rows((x, "x"), (y, "y"))
        classes = int(y.max()) + 1 if y.size else 0
        if classes < 2 or len(np.unique(y)) < 2:
            raise DataError("need at least two classes to fit a classifier")
        if y.min() < 0:
            raise DataError("labels must be integers in [0, n_classes)")
        self.n_classes_ = classes
        self.model_ = build_mlp(
            [x.shape[1], classes], [ACT_IDENTITY], seed=self.seed, dtype=np.float32
        )
        flat = repack_into_flat([self.model_])
        layer = self.model_.layers[0]
        params = [layer.weights, layer.bias]

        def objective(idx, want_grads):
            xb, yb = x[idx], y[idx]
            logits = xb @ layer.weights.T + layer.bias
            loss, gz = softmax_xent_grad(logits, yb)
            if not want_grads:
                return loss, None
            return loss, [gz.T @ xb, gz.sum(axis=0)]

        val_cb = None
        if x_val is not None:
            xv = as_matrix(x_val, "x_val", n_cols=x.shape[1], dtype=np.float32)
            yv = np.asarray(y_val, dtype=np.int64)

            def val_cb():
                logits = xv @ layer.weights.T + layer.bias
                return softmax_xent_grad(logits, yv)[0]

        cfg = TrainConfig(
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=min(self.batch_size, len(y)),
            seed=self.seed,
            lr=self.lr,
        )
        self.trace_ = train(
            params, objective, len(y), cfg, val_cb, optimizer=FlatAdam(flat, lr=self.lr)
        )
        return self

    def decision_function(self, x):
        check_is_fitted(self, "model_")
        layer = self.model_.layers[0]
        x = as_matrix(x, "x", n_cols=layer.in_dim, dtype=np.float32)
        return x @ layer.weights.T + layer.bias

    def predict_proba(self, x):
        return softmax(self.decision_function(x))

    def predict(self, x):
        return np.argmax(self.decision_function(x), axis=1)

    def score(self, x, y):
        return float(np.mean(self.predict(x) == np.asarray(y)))


def train_logreg(x, y, cfg: TrainConfig, x_val=None, y_val=None) -> LogisticRegressionProbe:
    probe = LogisticRegressionProbe(
        max_epochs=cfg.max_epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
        patience=cfg.patience,
    )
    return probe.fit(x, y, x_val, y_val)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricSet:
    accuracy: float
    f1_micro: float
    f1_macro: float
    f1_weighted: float
    confusion: np.ndarray

    def value(self, key: str) -> float:
        if key not in METRIC_KEYS:
            raise ConfigError(f"unknown metric {key!r}")
        return getattr(self, key)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_micro": self.f1_micro,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(y_true, y_pred, n_classes: int | None = None) -> MetricSet:
    """Accuracy plus micro/macro/weighted F1 from the confusion matrix.

    Classes absent from both truth and predictions score F1 = 0 and
    still count toward the macro average; with single-label data the
    micro F1 equals accuracy by construction.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    check_consistent_rows((y_true, "y_true"), (y_pred, "y_pred"))
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    tp = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=1).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    denom = support + predicted  # 2*tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    total = conf.sum()
    accuracy = float(tp.sum() / total)
    micro = accuracy  # pooled counts: single-label => micro F1 == accuracy
    macro = float(f1.mean())
    weighted = float((f1 * support).sum() / total)
    return MetricSet(accuracy, micro, macro, weighted, conf)


def evaluate(model, x, y, n_classes: int | None = None) -> MetricSet:
    if n_classes is None:
        n_classes = getattr(model, "n_classes_", None)
    return compute_metrics(y, model.predict(x), n_classes)


# ---------------------------------------------------------------------------
# Cross-validation


def kfold_indices(y, k: int, seed: int) -> list[np.ndarray]:
    """Stratified fold assignment: shuffle each class with the seed, then
    deal round-robin. Fold sizes differ by at most one.
    """
    y = np.asarray(y)
    n = len(y)
    if k > n:
        raise ConfigError(f"k={k} exceeds {n} rows")
    if k < 2:
        raise ConfigError("need k >= 2 folds")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        rng.shuffle(members)
        for i in members:
            folds[slot % k].append(int(i))
            slot += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def kfold_scores(
    x,
    y,
    k: int,
    seed: int,
    probe_factory: Callable[[int], LogisticRegressionProbe] | None = None,
    n_classes: int | None = None,
) -> list[MetricSet]:
    """Train a fresh probe per fold (fixed epoch cap, no early stopping)
    and score it on the held-out fold.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if probe_factory is None:
        probe_factory = lambda s: LogisticRegressionProbe(seed=s)
    folds = kfold_indices(y, k, seed)
    out = []
    for j, eval_idx in enumerate(folds):
        mask = np.ones(len(y), dtype=bool)
        mask[eval_idx] = False
        probe = probe_factory(int(seed) + j)
        probe.fit(x[mask], y[mask])
        out.append(compute_metrics(y[eval_idx], probe.predict(x[eval_idx]), n_classes))
    return out


@dataclass
class CvReport:
    """k-fold scores for each repeat plus the aggregate statistics."""

    fold_metrics: list[list[MetricSet]]          # [run][fold]
    per_run_means: dict[str, list[float]] = field(default_factory=dict)
    mean_of_means: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_runs(cls, runs: list[list[MetricSet]]) -> "CvReport":
        per_run = {
            key: [float(np.mean([m.value(key) for m in run])) for run in runs]
            for key in METRIC_KEYS
        }
        return cls(
            fold_metrics=runs,
            per_run_means=per_run,
            mean_of_means={k: float(np.mean(v)) for k, v in per_run.items()},
            std={k: float(np.std(v)) for k, v in per_run.items()},
        )

    def to_dict(self) -> dict:
        return {
            "per_run_means": self.per_run_means,
            "mean_of_means": self.mean_of_means,
            "std": self.std,
            "fold_metrics": [
                [m.to_dict() for m in run] for run in self.fold_metrics
            ],
        }


def kfold_cv(
    x,
    y,
    k: int = 10,
    repeats: int = 5,
    seeds: Sequence[int] | None = None,
    probe_factory=None,
) -> CvReport:
    """Repeated stratified k-fold CV on a fixed design matrix."""
    if seeds is None:
        seeds = tuple(range(repeats))
    if len(seeds) != repeats:
        raise ConfigError(f"{len(seeds)} seeds for {repeats} repeats")
    runs = [kfold_scores(x, y, k, int(s), probe_factory) for s in seeds]
    return CvReport.from_runs(runs)


# ---------------------------------------------------------------------------
# Training-time representation quality probe


@dataclass
class QualityTrace:
    """Per-epoch training loss plus the k fold scores of a probe trained
    on that epoch's representations.
    """

    epochs: list[dict] = field(default_factory=list)

    def append(self, train_loss: float, metrics: list[float]) -> None:
        self.epochs.append({"train_loss": train_loss, "metrics": list(metrics)})

    def __len__(self) -> int:
        return len(self.epochs)

    def final_metrics(self) -> list[float]:
        return list(self.epochs[-1]["metrics"])

    def to_dict(self) -> dict:
        return {"epochs": self.epochs}


def representation_quality_trace(
    autoencoder,
    x,
    y,
    classifier_factory: Callable[[int], LogisticRegressionProbe],
    k: int,
    metric: str,
    epochs: int,
    *,
    batch_size: int = 32,
    seed: int = 0,
    lr: float = 1e-3,
) -> QualityTrace:
    """Interleave encoder training with linear probing.

    Each iteration runs exactly one reconstruction epoch, encodes all of
    `x`, then runs a k-fold CV with a fresh classifier per fold on the
    representations, recording the chosen metric for every fold. The
    fold split is fixed across epochs so the trace is comparable.
    """
    if metric not in METRIC_KEYS:
        raise ConfigError(f"unknown metric {metric!r}")
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(y.max()) + 1
    stepper = autoencoder.reconstruction_stepper(x, batch_size=batch_size, seed=seed, lr=lr)
    folds = kfold_indices(y, k, seed)
    trace = QualityTrace()
    for _ in range(epochs):
        train_loss = stepper.run_epoch()
        z = autoencoder.transform(x)
        scores = []
        for j, eval_idx in enumerate(folds):
            mask = np.ones(len(y), dtype=bool)
            mask[eval_idx] = False
            probe = classifier_factory(int(seed) + j)
            probe.fit(z[mask], y[mask])
            m = compute_metrics(y[eval_idx], probe.predict(z[eval_idx]), n_classes)
            scores.append(m.value(metric))
        trace.append(train_loss, scores)
    return trace


def raw_baseline_metrics(
    x, y, classifier_factory, k: int, metric: str, seed: int = 0
) -> list[float]:
    """k-fold probe scores on the raw features, same folds as the trace."""
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(y.max()) + 1
    folds = kfold_indices(y, k, seed)
    scores = []
    for j, eval_idx in enumerate(folds):
        mask = np.ones(len(y), dtype=bool)
        mask[eval_idx] = False
        probe = classifier_factory(int(seed) + j)
        probe.fit(np.asarray(x)[mask], y[mask])
        m = compute_metrics(y[eval_idx], probe.predict(np.asarray(x)[eval_idx]), n_classes)
        scores.append(m.value(metric))
    return scores


def similarity_decision(metrics_on_x: Sequence[float], metrics_on_z: Sequence[float], r: float) -> bool:
    """Signed comparison: representations are accepted when
    mean(raw scores) - mean(representation scores) <= r. Representations
    that beat the raw features always pass.
    """
    if not len(metrics_on_x) or not len(metrics_on_z):
        raise ConfigError("metric lists must be nonempty")
    return float(np.mean(metrics_on_x)) - float(np.mean(metrics_on_z)) <= r
