"""Comparison models: logistic regression, k-nearest-neighbors, and the
same transformer trained from scratch without pretraining.

The two classical baselines consume one flat standardized vector per bike
(cumulative distance, trip count, total time, mean lat, mean lon); the
scratch transformer consumes the full feature tensor and trains every
parameter end-to-end against cross-entropy.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .data_model import BikeRecord, Status
from .feature_engine import STD_FLOOR, FeatureTensor, compute_aggregates
from .model import ModelConfig, TransformerModel, parameter_shapes
from .numerics import AdamState, Tensor
from .training import (LogEntry, TrainConfig, TrainLog, TrainingDivergedError,
                       _select_label_subset, ce_loss, step_params)

FLAT_COLUMNS = ("cum_distance_km", "trip_count", "total_time_min", "mean_lat", "mean_lon")


@dataclass
class FlatStats:
    mean: np.ndarray
    std: np.ndarray


def flat_features(records: list[BikeRecord]) -> np.ndarray:
    """Unstandardized (n, 5) per-bike summary vectors, record order."""
    out = np.empty((len(records), len(FLAT_COLUMNS)), dtype=np.float64)
    for i, rec in enumerate(records):
        agg = compute_aggregates(rec)
        lats = [p.coord.lat for p in rec.trajectory]
        lons = [p.coord.lon for p in rec.trajectory]
        out[i] = (agg.cum_distance_km, agg.trip_count, agg.total_time_min,
                  float(np.mean(lats)), float(np.mean(lons)))
    return out


def standardize_flat(values: np.ndarray, stats: FlatStats | None = None,
                     ) -> tuple[np.ndarray, FlatStats]:
    """Column z-scores; fit stats when none are given, else apply frozen ones."""
    if stats is None:
        stats = FlatStats(values.mean(axis=0), np.maximum(values.std(axis=0), STD_FLOOR))
    return (values - stats.mean) / stats.std, stats


# -- logistic regression -----------------------------------------------------------


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """P(unusable) per row."""
        z = x @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(x) > threshold).astype(np.int64)


def logreg_loss_and_grad(weights: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray,
                         ) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy and its exact gradient."""
    z = x @ weights + bias
    p = 1.0 / (1.0 + np.exp(-z))
    eps = 1e-12
    loss = float(-np.mean(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps)))
    residual = p - y
    return loss, x.T @ residual / y.size, float(residual.mean())


def train_logreg(x: np.ndarray, y: np.ndarray, epochs: int = 500, lr: float = 0.1,
                 seed: int = 0) -> LogisticModel:
    """Full-batch gradient descent from zero weights.

    The seed is part of the signature for symmetry with the other trainers;
    full-batch descent from a fixed start is already deterministic.
    """
    y = np.asarray([int(v) for v in y], dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty training set")
    if len(set(y.tolist())) < 2:
        raise ValueError("logistic regression needs both classes in training data")
    weights = np.zeros(x.shape[1], dtype=np.float64)
    bias = 0.0
    for _ in range(epochs):
        _, gw, gb = logreg_loss_and_grad(weights, bias, x, y)
        weights -= lr * gw
        bias -= lr * gb
    return LogisticModel(weights, bias)


# -- k nearest neighbors ------------------------------------------------------------


def knn_predict(train_x: np.ndarray, train_y, query: np.ndarray, k: int) -> Status:
    """Majority label among the k nearest by Euclidean distance.

    Vote ties resolve to Normal; distance ties prefer the lower training
    index (odd k avoids vote ties).
    """
    if train_x.shape[0] == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= train_x.shape[0]:
        raise ValueError(f"k must be in [1, {train_x.shape[0]}], got {k}")
    dists = np.linalg.norm(train_x - np.asarray(query, dtype=np.float64), axis=1)
    nearest = np.argsort(dists, kind="stable")[:k]
    votes = sum(int(train_y[i]) for i in nearest)
    return Status.UNUSABLE if votes > k - votes else Status.NORMAL


def knn_predict_batch(train_x: np.ndarray, train_y, queries: np.ndarray, k: int) -> np.ndarray:
    return np.array([int(knn_predict(train_x, train_y, q, k)) for q in queries], dtype=np.int64)


# -- scratch transformer -------------------------------------------------------------


def train_scratch_transformer(tensor: FeatureTensor, mcfg: ModelConfig, tcfg: TrainConfig,
                              ) -> tuple[TransformerModel, TrainLog]:
    """The ablation: same architecture, random init, everything trainable."""
    if not tensor.fully_labeled():
        raise ValueError("scratch training needs a fully labeled tensor")
    if (tensor.t, tensor.d) != (mcfg.t_steps, mcfg.input_dim):
        raise ValueError(f"tensor is {tensor.t}x{tensor.d}, config wants "
                         f"{mcfg.t_steps}x{mcfg.input_dim}")
    dtype = tcfg.dtype
    all_labels = np.array([int(s) for s in tensor.labels])
    rows = _select_label_subset(all_labels, tcfg.label_fraction, tcfg.seed)
    x_all = tensor.values[rows].astype(dtype)
    labels = all_labels[rows]
    n = rows.size
    model = TransformerModel(mcfg, seed=tcfg.seed, dtype=dtype)
    model.set_trainable(parameter_shapes(mcfg))
    state = AdamState(lr=tcfg.lr)
    drop_rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0xD1]))
    log = TrainLog()
    for epoch in range(1, tcfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence([tcfg.seed, 0x5C, epoch])).permutation(n)
        loss_sum, seen = 0.0, 0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            probs = model.forward_probs(Tensor(x_all[idx]), training=True, rng=drop_rng)
            loss = ce_loss(labels[idx], probs)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"scratch training loss became {value} at epoch {epoch}")
            model.zero_grads()
            loss.backward()
            step_params(model.trainable(), state)
            loss_sum += value * len(idx)
            seen += len(idx)
        log.entries.append(LogEntry("scratch", epoch, loss_sum / seen,
                                    time.perf_counter() - started))
    return model, log
