"""Surrogate suites for the three evaluation modes: per-device, unified and clustering-based."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..cluster import ClusterPartition
from ..errors import DimensionError, DomainError
from ..fleet import Fleet, measure_fleet_counts
from ..model_space import X_MAX, ModelSpec, as_pruning_vector, encode_features, pruned_out_channels
from .gbrt import PREDICTION_FLOOR_MS, GbrtEnsemble, GbrtParams, TrainingSet, fit_gbrt, pack_trees, traverse

MODES = ("per-device", "unified", "clustering")
UNIFIED_KEY = "ALL"


def sample_vectors(L: int, count: int, seed: int, upper: float = X_MAX, stream: int = 0) -> np.ndarray:
    """``count`` pruning vectors drawn uniformly from [0, upper]^L."""
    if count < 1:
        raise DomainError("count must be at least 1")
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stream])
    return rng.uniform(0.0, upper, size=(count, L))


def measure_matrix(fleet: Fleet, model: ModelSpec, vectors: np.ndarray, reps: int = 30, seed: int = 0) -> np.ndarray:
    """Measured mean latency of every pruned model on every device: shape (len(vectors), N)."""
    return np.stack([
        measure_fleet_counts(fleet, model, pruned_out_channels(model, as_pruning_vector(x, model.L)), reps, seed)
        for x in vectors
    ])


def cluster_targets(latencies: np.ndarray, fleet: Fleet, partition: ClusterPartition,
                    representative_only: bool = False) -> np.ndarray:
    """Per-cluster mean of a (rows, N) latency matrix: shape (rows, K), cluster k in column k-1."""
    ids = fleet.ids
    cols = []
    for k in range(1, partition.K + 1):
        if representative_only:
            members = [ids.index(partition.representatives[k])]
        else:
            members = [i for i, d in enumerate(ids) if partition.assignments[d] == k]
        cols.append(latencies[:, members].mean(axis=1))
    return np.stack(cols, axis=1)


def sample_training_set(fleet: Fleet, partition: ClusterPartition, model: ModelSpec, count: int,
                        seed: int = 0, reps: int = 30, representative_only: bool = False) -> dict[int, TrainingSet]:
    """Identical sampled feature rows for every cluster, with that cluster's mean latency as target."""
    vectors = sample_vectors(model.L, count, seed)
    targets = cluster_targets(measure_matrix(fleet, model, vectors, reps, seed), fleet, partition,
                              representative_only)
    X = np.stack([encode_features(v) for v in vectors])
    return {k: TrainingSet(X, targets[:, k - 1]) for k in range(1, partition.K + 1)}


@dataclass
class SurrogateSuite:
    """Fitted ensembles keyed by device id (per-device), ``"ALL"`` (unified) or cluster ordinal (clustering)."""

    mode: str
    models: dict
    _packed: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.models:
            raise DomainError("a surrogate suite needs at least one ensemble")
        if self.mode == "unified" and list(self.models) != [UNIFIED_KEY]:
            raise DomainError("unified suites hold exactly one ensemble keyed 'ALL'")
        dims = {e.n_features for e in self.models.values()}
        if len(dims) != 1:
            raise DimensionError("all ensembles of a suite must share the feature dimension")

    @property
    def n_features(self) -> int:
        return next(iter(self.models.values())).n_features

    def _pack(self):
        if self._packed is None:
            ensembles = list(self.models.values())
            trees = [t for e in ensembles for t in e.trees]
            sizes = np.array([len(e.trees) for e in ensembles])
            bases = np.array([e.base_prediction for e in ensembles])
            rates = np.array([e.learning_rate for e in ensembles])
            packed = pack_trees(trees) if trees else None
            offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
            self._packed = (packed, sizes, offsets, bases, rates)
        return self._packed

    def predict_all(self, X: np.ndarray) -> np.ndarray:
        """Prediction of every ensemble (columns, in ``models`` order) for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {X.shape[1]}")
        packed, sizes, offsets, bases, rates = self._pack()
        if packed is None:
            sums = np.zeros((X.shape[0], len(bases)))
        else:
            leaves = traverse(packed, X)
            sums = np.zeros((X.shape[0], len(bases)))
            nonempty = sizes > 0
            sums[:, nonempty] = np.add.reduceat(leaves, offsets[nonempty], axis=1)
        return np.maximum(bases + rates * sums, PREDICTION_FLOOR_MS)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "models": {str(k): e.to_dict() for k, e in self.models.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "SurrogateSuite":
        mode = data["mode"]
        models = {}
        for k, e in data["models"].items():
            key = int(k) if mode == "clustering" else k
            models[key] = GbrtEnsemble.from_dict(e)
        return cls(mode, models)


def save_suite(suite: SurrogateSuite, path: str | Path) -> None:
    Path(path).write_text(json.dumps(suite.to_dict()) + "\n")


def load_suite(path: str | Path) -> SurrogateSuite:
    return SurrogateSuite.from_dict(json.loads(Path(path).read_text()))


def estimate_average_latency(suite: SurrogateSuite, X: Sequence[float]) -> float:
    """Fleet-average latency estimate: the plain mean of the suite's ensemble predictions.

    For a clustering suite this is the unweighted mean over clusters; for a
    per-device suite the mean over devices; for a unified suite its single value.
    """
    x = encode_features(X)
    return float(np.mean(suite.predict_all(x[None, :])[0]))


def estimate_many(suite: SurrogateSuite, X: np.ndarray) -> np.ndarray:
    return suite.predict_all(X).mean(axis=1)


def predict_devices(suite: SurrogateSuite, X: np.ndarray, fleet: Fleet,
                    partition: ClusterPartition | None = None) -> np.ndarray:
    """Latency each device is predicted to have: (rows, N). Devices use their own, their cluster's or the single model."""
    preds = suite.predict_all(X)
    keys = list(suite.models)
    if suite.mode == "unified":
        return np.repeat(preds, len(fleet), axis=1)
    if suite.mode == "per-device":
        return preds[:, [keys.index(d) for d in fleet.ids]]
    if partition is None:
        raise DomainError("a clustering suite needs the partition to map devices to clusters")
    return preds[:, [keys.index(partition.assignments[d]) for d in fleet.ids]]


def mape(predictions: Sequence[float], truths: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if p.shape != t.shape or p.size == 0:
        raise DimensionError("predictions and truths must be non-empty and of equal length")
    if np.any(t <= 0):
        raise DomainError("truths must be positive")
    return float(100.0 * np.mean(np.abs(p - t) / t))


def fit_suite(mode: str, X: np.ndarray, latencies: np.ndarray, fleet: Fleet, partition: ClusterPartition,
              hyper: GbrtParams = GbrtParams(), representative_only: bool = False) -> SurrogateSuite:
    """Fit a suite from an already measured (rows, N) latency matrix."""
    if mode == "per-device":
        models = {d: fit_gbrt(TrainingSet(X, latencies[:, i]), hyper) for i, d in enumerate(fleet.ids)}
    elif mode == "unified":
        models = {UNIFIED_KEY: fit_gbrt(TrainingSet(X, latencies.mean(axis=1)), hyper)}
    elif mode == "clustering":
        targets = cluster_targets(latencies, fleet, partition, representative_only)
        models = {k: fit_gbrt(TrainingSet(X, targets[:, k - 1]), hyper) for k in range(1, partition.K + 1)}
    else:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    return SurrogateSuite(mode, models)


def build_suite(mode: str, fleet: Fleet, partition: ClusterPartition, model: ModelSpec, count: int,
                seed: int = 0, hyper: GbrtParams = GbrtParams(), reps: int = 30,
                representative_only: bool = False) -> SurrogateSuite:
    """Sample ``count`` pruning vectors, measure them on the fleet and fit one suite.

    The sampled rows depend only on (L, count, seed), so suites of different
    modes built with the same arguments train on the same vectors.
    """
    vectors = sample_vectors(model.L, count, seed)
    latencies = measure_matrix(fleet, model, vectors, reps, seed)
    return fit_suite(mode, vectors, latencies, fleet, partition, hyper, representative_only)


def compare_modes(fleet: Fleet, partition: ClusterPartition, model: ModelSpec, n_train: int = 100,
                  n_test: int = 100, seed: int = 0, hyper: GbrtParams = GbrtParams(), reps: int = 30,
                  modes: Sequence[str] = MODES) -> dict[str, float]:
    """Held-out per-device MAPE of each evaluation mode.

    Every mode trains on the same measured rows; each device's latency on
    fresh vectors is predicted by the model that mode assigns to it.
    """
    train = sample_vectors(model.L, n_train, seed)
    test = sample_vectors(model.L, n_test, seed, stream=1)
    train_lat = measure_matrix(fleet, model, train, reps, seed)
    test_lat = measure_matrix(fleet, model, test, reps, seed)
    result = {}
    for mode in modes:
        suite = fit_suite(mode, train, train_lat, fleet, partition, hyper)
        result[mode] = mape(predict_devices(suite, test, fleet, partition), test_lat)
    return result
