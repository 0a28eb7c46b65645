"""Density-based device clustering on benchmark-latency features."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, DomainError
from .fleet import Fleet, benchmark_features, measure_fleet
from .model_space import ModelSpec

NOISE = -1
DEFAULT_MIN_PTS = 8


@dataclass(frozen=True)
class DbscanResult:
    """Raw DBSCAN output: 0-based cluster labels (``NOISE`` = -1) and the core-point mask."""

    labels: np.ndarray
    core: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if np.any(self.labels >= 0) else 0


def _as_features(features) -> np.ndarray:
    if len(features) == 0:
        raise DimensionError("features must be non-empty")
    try:
        F = np.asarray(features, dtype=np.float64)
    except ValueError:
        raise DimensionError("feature vectors must all have the same dimension") from None
    if F.ndim == 1:
        F = F.reshape(-1, 1)
    if F.ndim != 2:
        raise DimensionError("feature vectors must all have the same dimension")
    return F


def pairwise_distances(F: np.ndarray) -> np.ndarray:
    diff = F[:, None, :] - F[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def canonical_labels(labels: Sequence[int]) -> np.ndarray:
    """Relabel clusters 0, 1, ... in order of their smallest member index; noise stays -1."""
    labels = np.asarray(labels)
    out = np.full(labels.shape, NOISE, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def dbscan(features, eps: float, min_pts: int = DEFAULT_MIN_PTS) -> DbscanResult:
    """Euclidean DBSCAN. Neighborhoods are closed balls and include the point itself.

    A border point reachable from several clusters joins the cluster of its
    lowest-index core neighbor. Labels are canonical (ordered by smallest member).
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if min_pts < 1:
        raise DomainError("min_pts must be at least 1")
    F = _as_features(features)
    n = F.shape[0]
    adj = pairwise_distances(F) <= eps
    core = adj.sum(axis=1) >= min_pts

    labels = np.full(n, NOISE, dtype=np.int64)
    next_label = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        labels[start] = next_label
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for q in np.flatnonzero(adj[p] & core):
                if labels[q] == NOISE:
                    labels[q] = next_label
                    queue.append(q)
        next_label += 1

    for p in np.flatnonzero(~core):
        neighbors = np.flatnonzero(adj[p] & core)
        if neighbors.size:
            labels[p] = labels[neighbors[0]]
    return DbscanResult(canonical_labels(labels), core)


def k_distances(features, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest other point."""
    F = _as_features(features)
    k = min(k, F.shape[0] - 1)
    return np.sort(pairwise_distances(F), axis=1)[:, k]  # column 0 is the point itself


def default_eps(features, min_pts: int = DEFAULT_MIN_PTS) -> float:
    """Knee of the sorted k-distance curve, k = ceil(min_pts).

    The knee is the point of the normalized curve farthest below its chord.
    """
    F = _as_features(features)
    if F.shape[0] == 1:
        return 1.0
    y = np.sort(k_distances(F, math.ceil(min_pts)))
    span = y[-1] - y[0]
    if span <= 0:
        return float(y[0]) if y[0] > 0 else 1e-12
    x = np.linspace(0.0, 1.0, y.size)
    eps = float(y[np.argmax(x - (y - y[0]) / span)])
    return eps if eps > 0 else 1e-12


@dataclass(frozen=True)
class ClusterPartition:
    """A total, disjoint partition of device ids into clusters 1..K."""

    assignments: Mapping[str, int]
    K: int
    representatives: Mapping[int, str]

    def __post_init__(self):
        object.__setattr__(self, "assignments", dict(self.assignments))
        object.__setattr__(self, "representatives", {int(k): v for k, v in self.representatives.items()})
        used = set(self.assignments.values())
        if used != set(range(1, self.K + 1)):
            raise DomainError(f"cluster ordinals {sorted(used)} do not cover 1..{self.K} exactly")
        if set(self.representatives) != used:
            raise DomainError("every cluster needs exactly one representative")
        for k, dev in self.representatives.items():
            if self.assignments.get(dev) != k:
                raise DomainError(f"representative {dev!r} is not a member of cluster {k}")

    def members(self, k: int) -> list[str]:
        if k not in self.representatives:
            raise DomainError(f"unknown cluster {k}")
        return [d for d, c in self.assignments.items() if c == k]

    def sizes(self) -> dict[int, int]:
        return {k: len(self.members(k)) for k in range(1, self.K + 1)}

    def labels_for(self, device_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.assignments[d] for d in device_ids])

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "assignments": dict(self.assignments),
            "representatives": {str(k): v for k, v in sorted(self.representatives.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterPartition":
        return cls(
            assignments={k: int(v) for k, v in data["assignments"].items()},
            K=int(data["K"]),
            representatives={int(k): v for k, v in data["representatives"].items()},
        )


def save_partition(partition: ClusterPartition, path: str | Path) -> None:
    Path(path).write_text(json.dumps(partition.to_dict(), indent=1) + "\n")


def load_partition(path: str | Path) -> ClusterPartition:
    return ClusterPartition.from_dict(json.loads(Path(path).read_text()))


def build_partition(result: DbscanResult, features, device_ids: Sequence[str] | None = None) -> ClusterPartition:
    """Turn raw DBSCAN labels into a total partition with medoid representatives.

    Noise points join the cluster of their nearest core point. Without any
    cluster every point becomes its own singleton cluster.
    """
    F = _as_features(features)
    n = F.shape[0]
    ids = list(device_ids) if device_ids is not None else [str(i) for i in range(n)]
    if len(ids) != n or len(result.labels) != n:
        raise DimensionError("labels, features and device ids must have equal length")
    labels = np.array(result.labels, dtype=np.int64)
    D = pairwise_distances(F)
    if not np.any(labels >= 0):
        labels = np.arange(n)
    else:
        cores = np.flatnonzero(result.core & (labels >= 0))
        for p in np.flatnonzero(labels == NOISE):
            nearest = cores[np.argmin(D[p, cores])]
            labels[p] = labels[nearest]
        labels = canonical_labels(labels)

    K = int(labels.max()) + 1
    representatives = {}
    for c in range(K):
        members = np.flatnonzero(labels == c)
        cost = D[np.ix_(members, members)].sum(axis=1)
        representatives[c + 1] = ids[members[int(np.argmin(cost))]]
    assignments = {ids[i]: int(labels[i]) + 1 for i in range(n)}
    return ClusterPartition(assignments, K, representatives)


def estimate_k_from_partition(partition: ClusterPartition) -> int:
    return partition.K


def cluster_fleet(fleet: Fleet, benchmark: ModelSpec, eps: float | None = None,
                  min_pts: int = DEFAULT_MIN_PTS, reps: int = 30, seed: int = 0) -> ClusterPartition:
    """Benchmark every device, run DBSCAN and build the partition."""
    features = benchmark_features(fleet, benchmark, reps, seed)
    if eps is None:
        eps = default_eps(features, min_pts)
    return build_partition(dbscan(features, eps, min_pts), features, fleet.ids)


def cluster_latency(fleet: Fleet, partition: ClusterPartition, k: int, model: ModelSpec,
                    reps: int = 30, seed: int = 0, representative_only: bool = False) -> float:
    """Mean measured latency of ``model`` over the members of cluster ``k``."""
    if k not in partition.representatives:
        raise DomainError(f"unknown cluster {k}")
    if representative_only:
        members = [partition.representatives[k]]
    else:
        members = set(partition.members(k))
    sub = Fleet(tuple(d for d in fleet if d.device_id in members))
    return float(np.mean(measure_fleet(sub, model, reps, seed)))


def cluster_latencies(fleet: Fleet, partition: ClusterPartition, model: ModelSpec, reps: int = 30,
                      seed: int = 0, representative_only: bool = False) -> dict[int, float]:
    return {
        k: cluster_latency(fleet, partition, k, model, reps, seed, representative_only)
        for k in range(1, partition.K + 1)
    }


def adjusted_rand_index(labels_a: Sequence, labels_b: Sequence) -> float:
    """Hubert-Arabie adjusted Rand index between two labelings of the same points."""
    a = np.unique(np.asarray(labels_a), return_inverse=True)[1]
    b = np.unique(np.asarray(labels_b), return_inverse=True)[1]
    if a.shape != b.shape:
        raise DimensionError("labelings must have equal length")
    n = a.size
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def pairs(x):
        return np.sum(x * (x - 1) / 2.0)

    index = pairs(table)
    rows, cols = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    expected = rows * cols / total if total else 0.0
    max_index = (rows + cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))
