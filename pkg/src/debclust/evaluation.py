"""Linear, semi-supervised (label subset) and KNN evaluation of frozen embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .training import AdamConfig, AdamState, adam_step


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    batch_size: int = 512
    label_fraction: float = 1.0
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if not 0 < self.label_fraction <= 1:
            raise ValueError(f"label_fraction must be in (0, 1], got {self.label_fraction}")


@dataclass(frozen=True)
class Metrics:
    top1: float
    f1: float
    per_class_f1: tuple[float, ...]


def compute_metrics(pred, true, class_count: int) -> Metrics:
    """Top-1 accuracy plus F1.

    With two classes ``f1`` is the binary F1 of the minority class in
    ``true`` (class 1 on a tie); otherwise it is the unweighted macro mean.
    Classes with no predictions and no members score 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"{len(pred)} predictions for {len(true)} labels")
    n = len(true)
    top1 = float((pred == true).sum() / n) if n else 0.0
    per_class = []
    for c in range(class_count):
        tp = int(((pred == c) & (true == c)).sum())
        fp = int(((pred == c) & (true != c)).sum())
        fn = int(((pred != c) & (true == c)).sum())
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    if class_count == 2:
        counts = np.bincount(true, minlength=2)
        minority = 0 if counts[0] < counts[1] else 1
        f1 = per_class[minority]
    else:
        f1 = float(np.mean(per_class))
    return Metrics(top1, float(f1), tuple(per_class))


def stratified_subset(labels, fraction: float, seed: int = 0) -> np.ndarray:
    """Indices of a seeded, class-stratified subset of ``round(fraction * N)`` samples.

    Per-class quotas are rounded by largest remainder so the total is exact
    and each class share is within one sample of proportional.
    """
    labels = np.asarray(labels)
    n = len(labels)
    total = int(np.floor(fraction * n + 0.5))
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * total / n
    quota = np.floor(exact).astype(int)
    short = total - quota.sum()
    if short:
        order = np.argsort(-(exact - quota), kind="stable")
        quota[order[:short]] += 1
    rng = np.random.default_rng(seed)
    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        picked.append(rng.choice(members, size=q, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=int)


def _cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    shift = logits - logits.data.max(axis=1, keepdims=True)
    log_norm = ad.log(ad.exp(shift).sum(axis=1, keepdims=True))
    return -((shift - log_norm) * onehot).sum() / len(onehot)


def train_linear(x, y, class_count: int, cfg: ProbeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Softmax regression by Adam on cross-entropy; weights start at zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("linear probe needs at least two classes in the training set")
    params = {"w": np.zeros((x.shape[1], class_count)), "b": np.zeros(class_count)}
    state = AdamState.zeros_like(params, cfg.adam)
    onehot = np.eye(class_count)[y]
    rng = np.random.default_rng(cfg.seed)
    bs = min(cfg.batch_size, len(x))
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(x), bs):
            idx = order[lo:lo + bs]
            w = Tensor(params["w"], requires_grad=True)
            b = Tensor(params["b"], requires_grad=True)
            loss = _cross_entropy(ad.as_tensor(x[idx]) @ w + b, onehot[idx])
            gm = ad.backward(loss)
            params, state = adam_step(params, {"w": gm[w], "b": gm[b]}, state, no_decay=("b",))
    return params["w"], params["b"]


def linear_probe(train_x, train_y, test_x, test_y, class_count: int, cfg: ProbeConfig = ProbeConfig()) -> Metrics:
    """Fit a linear classifier on frozen embeddings and score it on the test split.

    With ``label_fraction < 1`` only a stratified subset of the training
    labels is used (the semi-supervised protocol).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if cfg.label_fraction < 1:
        idx = stratified_subset(train_y, cfg.label_fraction, cfg.seed)
        train_x, train_y = train_x[idx], train_y[idx]
    w, b = train_linear(train_x, train_y, class_count, cfg)
    pred = (np.asarray(test_x) @ w + b).argmax(axis=1)
    return compute_metrics(pred, test_y, class_count)


def knn_predict(train_x, train_y, query_x, k: int = 20) -> np.ndarray:
    """Euclidean majority vote among the ``min(k, N_train)`` nearest training points.

    Ties go to the class with the smaller summed distance, then the lower index.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    query_x = np.asarray(query_x, dtype=np.float64)
    if len(train_x) == 0:
        raise ValueError("empty training set")
    if train_x.ndim == 1:
        train_x = train_x[:, None]
    if query_x.ndim == 1:
        query_x = query_x[:, None]
    kk = min(k, len(train_x))
    n_classes = int(train_y.max()) + 1
    d2 = (query_x**2).sum(1)[:, None] - 2 * query_x @ train_x.T + (train_x**2).sum(1)[None, :]
    dist = np.sqrt(np.maximum(d2, 0.0))
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    out = np.empty(len(query_x), dtype=np.int64)
    for q, idx in enumerate(nearest):
        votes = np.bincount(train_y[idx], minlength=n_classes)
        summed = np.bincount(train_y[idx], weights=dist[q, idx], minlength=n_classes)
        best = np.flatnonzero(votes == votes.max())
        out[q] = best[np.argmin(summed[best])]
    return out


def knn_probe(train_x, train_y, test_x, test_y, class_count: int, k: int = 20) -> Metrics:
    return compute_metrics(knn_predict(train_x, train_y, test_x, k), test_y, class_count)


def adjusted_rand_index(a, b) -> float:
    """Pair-counting adjusted Rand index between two labelings."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        x = np.asarray(x, dtype=np.float64)
        return float((x * (x - 1) / 2).sum())

    index = pairs(table)
    rows, cols = pairs(table.sum(1)), pairs(table.sum(0))
    total = pairs([len(a)])
    expected = rows * cols / total if total else 0.0
    max_index = (rows + cols) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


METRICS_HEADER = ("protocol", "dataset", "seed", "top1", "f1")


def write_metrics(rows: Sequence[tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for protocol, dataset, seed, m in rows:
            w.writerow([protocol, dataset, seed, repr(m.top1), repr(m.f1)])
