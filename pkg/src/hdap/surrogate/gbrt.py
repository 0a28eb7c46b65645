"""Least-squares gradient-boosted regression trees, written for small exact-split problems.

Candidate thresholds are midpoints between consecutive distinct feature values;
every candidate is scored (no histogram binning), so fitting is deterministic.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from ..errors import DimensionError, DomainError, InsufficientDataError
from ..model_space import encode_features

PREDICTION_FLOOR_MS = 0.001


@dataclass(frozen=True)
class GbrtParams:
    n_rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.05
    min_leaf: int = 2

    def __post_init__(self):
        if self.n_rounds < 0 or self.max_depth < 0 or self.min_leaf < 1:
            raise DomainError("n_rounds, max_depth must be >= 0 and min_leaf >= 1")
        if not 0 < self.learning_rate <= 1:
            raise DomainError("learning_rate must lie in (0, 1]")


@dataclass(frozen=True)
class TrainingSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"features {X.shape} and targets {y.shape} do not line up")
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise DomainError("latency targets must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def rows(self) -> list[tuple[np.ndarray, float]]:
        return [(self.X[i], float(self.y[i])) for i in range(len(self))]


@dataclass(frozen=True)
class RegressionTree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf; otherwise ``x[feature] <= threshold`` goes left."""

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionTree":
        return cls(
            feature=tuple(int(v) for v in data["feature"]),
            threshold=tuple(float(v) for v in data["threshold"]),
            left=tuple(int(v) for v in data["left"]),
            right=tuple(int(v) for v in data["right"]),
            value=tuple(float(v) for v in data["value"]),
        )


def _argbest(gain: np.ndarray) -> tuple[int, int]:
    """(position, feature) of the maximal gain.

    Gains within a relative 1e-12 of the maximum count as tied; ties go to the
    lowest feature, then the lowest threshold.
    """
    best = gain.max()
    tied = gain >= best - 1e-12 * abs(best)
    f, pos = divmod(int(np.argmax(tied.T)), gain.shape[0])
    return pos, f


def _best_split(X: np.ndarray, r: np.ndarray, min_leaf: int):
    """Return (gain, feature, threshold, left_mask) of the best SSE-reducing split, or None."""
    m, L = X.shape
    if m < 2 * min_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cl = np.cumsum(r[order], axis=0)[:-1]  # left sums for left sizes 1..m-1
    total = float(r.sum())
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    gain = cl * cl / nl + (total - cl) ** 2 / nr - total * total / m
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    pos, f = _argbest(gain)
    best = gain[pos, f]
    sse = float(np.sum((r - r.mean()) ** 2))
    if not best > 1e-12 * max(sse, 1e-300):
        return None
    lo, hi = xs[pos, f], xs[pos + 1, f]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return best, f, float(thr), X[:, f] <= thr


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int, min_leaf: int) -> RegressionTree:
    """Greedy depth-first least-squares tree on residuals ``r``."""
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(r[idx])))
        if depth >= max_depth:
            return node
        split = _best_split(X[idx], r[idx], min_leaf)
        if split is None:
            return node
        _, f, thr, mask = split
        feature[node] = int(f)
        threshold[node] = thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree(tuple(feature), tuple(threshold), tuple(left), tuple(right), tuple(value))


@njit(cache=True)
def _grow_kernel(X, r, order, max_depth, min_leaf):
    """Level-wise greedy tree growth on presorted columns.

    Produces the same splits as :func:`fit_tree` (same gain, same tie rule).
    Returns node arrays, the node count and each row's leaf.
    """
    n, L = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(n, dtype=np.int64)
    n_nodes = 1
    frontier = np.zeros(cap, dtype=np.int64)
    n_front = 1
    next_front = np.zeros(cap, dtype=np.int64)
    rows = np.empty(n, dtype=np.int64)
    gain = np.empty((n, L))

    total0 = 0.0
    for i in range(n):
        total0 += r[i]
    value[0] = total0 / n

    for _depth in range(max_depth):
        n_next = 0
        for fi in range(n_front):
            k = frontier[fi]
            m = 0
            total = 0.0
            sq = 0.0
            for i in range(n):
                if node_of[i] == k:
                    m += 1
                    total += r[i]
                    sq += r[i] * r[i]
            if m < 2 * min_leaf:
                continue
            best = -np.inf
            for f in range(L):
                cnt = 0
                for j in range(n):
                    i = order[j, f]
                    if node_of[i] == k:
                        rows[cnt] = i
                        cnt += 1
                cl = 0.0
                for pos in range(m - 1):
                    cl += r[rows[pos]]
                    nl = pos + 1.0
                    nr = m - nl
                    g = -np.inf
                    if nl >= min_leaf and nr >= min_leaf and X[rows[pos + 1], f] > X[rows[pos], f]:
                        dev = cl - total * nl / m
                        g = dev * dev * (m / (nl * nr))
                    gain[pos, f] = g
                    if g > best:
                        best = g
            if best == -np.inf:
                continue
            sse = sq - total * total / m
            if not best > 1e-12 * max(sse, 1e-300):
                continue
            tol = best - 1e-12 * abs(best)
            bf = -1
            bp = -1
            for f in range(L):
                for pos in range(m - 1):
                    if gain[pos, f] >= tol:
                        bf = f
                        bp = pos
                        break
                if bf >= 0:
                    break
            cnt = 0
            for j in range(n):
                i = order[j, bf]
                if node_of[i] == k:
                    rows[cnt] = i
                    cnt += 1
            lo = X[rows[bp], bf]
            hi = X[rows[bp + 1], bf]
            thr = 0.5 * (lo + hi)
            if not (lo <= thr and thr < hi):
                thr = lo
            kl = n_nodes
            kr = n_nodes + 1
            n_nodes += 2
            feature[k] = bf
            threshold[k] = thr
            left[k] = kl
            right[k] = kr
            sl = 0.0
            for pos in range(cnt):
                i = rows[pos]
                if pos <= bp:
                    node_of[i] = kl
                    sl += r[i]
                else:
                    node_of[i] = kr
            value[kl] = sl / (bp + 1)
            value[kr] = (total - sl) / (m - bp - 1)
            next_front[n_next] = kl
            next_front[n_next + 1] = kr
            n_next += 2
        if n_next == 0:
            break
        for fi in range(n_next):
            frontier[fi] = next_front[fi]
        n_front = n_next

    # leaf values as plain means of their rows
    sums = np.zeros(n_nodes)
    counts = np.zeros(n_nodes)
    for i in range(n):
        sums[node_of[i]] += r[i]
        counts[node_of[i]] += 1.0
    for k in range(n_nodes):
        if feature[k] < 0 and counts[k] > 0:
            value[k] = sums[k] / counts[k]
    return feature, threshold, left, right, value, n_nodes, node_of


def fit_tree_presorted(X: np.ndarray, r: np.ndarray, order: np.ndarray, max_depth: int,
                       min_leaf: int) -> tuple[RegressionTree, np.ndarray]:
    """Fast equivalent of :func:`fit_tree`; ``order`` is the stable column argsort of ``X``.

    Returns the tree and the leaf value of every training row.
    """
    feat, thr, lft, rgt, val, n_nodes, node_of = _grow_kernel(
        np.ascontiguousarray(X, dtype=np.float64), np.ascontiguousarray(r, dtype=np.float64),
        np.ascontiguousarray(order, dtype=np.int64), int(max_depth), int(min_leaf),
    )
    tree = RegressionTree(
        tuple(int(v) for v in feat[:n_nodes]), tuple(float(v) for v in thr[:n_nodes]),
        tuple(int(v) for v in lft[:n_nodes]), tuple(int(v) for v in rgt[:n_nodes]),
        tuple(float(v) for v in val[:n_nodes]),
    )
    return tree, val[node_of]


def apply_tree(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    """Leaf values for every row of ``X``."""
    X = np.atleast_2d(X)
    feat = np.asarray(tree.feature)
    thr = np.asarray(tree.threshold)
    lft, rgt = np.asarray(tree.left), np.asarray(tree.right)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = feat[node]
        inner = f >= 0
        if not inner.any():
            break
        go_left = X[rows, np.maximum(f, 0)] <= thr[node]
        node = np.where(inner, np.where(go_left, lft[node], rgt[node]), node)
    return np.asarray(tree.value)[node]


@dataclass
class GbrtEnsemble:
    base_prediction: float
    trees: list[RegressionTree]
    learning_rate: float
    params: GbrtParams
    n_features: int
    train_mse: list[float] = field(default_factory=list, compare=False)
    _packed: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def packed(self):
        """Trees padded into dense (n_trees, max_nodes) arrays for vectorized traversal."""
        if self._packed is None:
            self._packed = pack_trees(self.trees)
        return self._packed

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not self.trees:
            return np.full(X.shape[0], self.base_prediction)
        leaves = traverse(self.packed(), X)
        return self.base_prediction + self.learning_rate * leaves.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "base_prediction": self.base_prediction,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "params": asdict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GbrtEnsemble":
        return cls(
            base_prediction=float(data["base_prediction"]),
            trees=[RegressionTree.from_dict(t) for t in data["trees"]],
            learning_rate=float(data["learning_rate"]),
            params=GbrtParams(**data["params"]),
            n_features=int(data["n_features"]),
        )


def pack_trees(trees: Sequence[RegressionTree]):
    width = max(t.n_nodes for t in trees)
    T = len(trees)
    feat = np.full((T, width), -1, dtype=np.int64)
    thr = np.zeros((T, width))
    lft = np.zeros((T, width), dtype=np.int64)
    rgt = np.zeros((T, width), dtype=np.int64)
    val = np.zeros((T, width))
    for i, t in enumerate(trees):
        n = t.n_nodes
        feat[i, :n] = t.feature
        thr[i, :n] = t.threshold
        lft[i, :n] = t.left
        rgt[i, :n] = t.right
        val[i, :n] = t.value
    depth = max(t.depth() for t in trees)
    return feat, thr, lft, rgt, val, depth


@njit(cache=True)
def _traverse_kernel(feat, thr, lft, rgt, val, X):
    out = np.empty((X.shape[0], feat.shape[0]))
    for i in range(X.shape[0]):
        for t in range(feat.shape[0]):
            node = 0
            while feat[t, node] >= 0:
                if X[i, feat[t, node]] <= thr[t, node]:
                    node = lft[t, node]
                else:
                    node = rgt[t, node]
            out[i, t] = val[t, node]
    return out


def traverse(packed, X: np.ndarray) -> np.ndarray:
    """Leaf value of every tree for every row: shape (n_rows, n_trees)."""
    feat, thr, lft, rgt, val, _ = packed
    return _traverse_kernel(feat, thr, lft, rgt, val, np.ascontiguousarray(X, dtype=np.float64))


def fit_gbrt(data: TrainingSet, params: GbrtParams = GbrtParams()) -> GbrtEnsemble:
    """Boost ``params.n_rounds`` least-squares trees on the residuals of a constant start."""
    if len(data) < 2:
        raise InsufficientDataError(f"need at least 2 rows to fit, got {len(data)}")
    X, y = data.X, data.y
    base = float(np.mean(y))
    pred = np.full(y.shape, base)
    lr = params.learning_rate
    trees = []
    mse = [float(np.mean((y - pred) ** 2))]
    order = np.argsort(X, axis=0, kind="stable")
    for _ in range(params.n_rounds):
        tree, fitted = fit_tree_presorted(X, y - pred, order, params.max_depth, params.min_leaf)
        trees.append(tree)
        pred = pred + lr * fitted
        mse.append(float(np.mean((y - pred) ** 2)))
    return GbrtEnsemble(base, trees, lr, params, X.shape[1], mse)


def predict(ensemble: GbrtEnsemble, X: Sequence[float]) -> float:
    """Predicted latency (ms) for one pruning vector, floored at a small positive value."""
    x = encode_features(X)
    if x.ndim != 1 or x.shape[0] != ensemble.n_features:
        raise DimensionError(f"expected a vector of length {ensemble.n_features}, got shape {x.shape}")
    return max(float(ensemble.raw_predict(x[None, :])[0]), PREDICTION_FLOOR_MS)


def predict_many(ensemble: GbrtEnsemble, X: np.ndarray) -> np.ndarray:
    return np.maximum(ensemble.raw_predict(X), PREDICTION_FLOOR_MS)
