"""Penalized latency fitness and the simulated accuracy oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, DomainError
from ..model_space import ModelSpec, as_pruning_vector, layer_flops_from_counts, pruned_out_channels
from ..surrogate.suite import SurrogateSuite, estimate_average_latency

DROP_COEFF = 0.6
DROP_POWER = 2
RECOVERY_COEFF = 0.7
DEFAULT_BASE_ACCURACY = 0.9


def accuracy_from_ratio(base_accuracy: float, rho: float, recovery_level: float) -> float:
    """Accuracy after removing a fraction ``rho`` of the FLOPs, with partial recovery."""
    if not 0.0 <= recovery_level <= 1.0:
        raise DomainError(f"recovery_level must lie in [0, 1], got {recovery_level}")
    drop = DROP_COEFF * (1.0 - recovery_level * RECOVERY_COEFF) * rho ** DROP_POWER
    return float(np.clip(base_accuracy * (1.0 - drop), 0.0, 1.0))


def flops_reduction(model: ModelSpec, out_counts: np.ndarray) -> float:
    """Fraction of ``model``'s FLOPs removed when it is re-shaped to ``out_counts``."""
    total = layer_flops_from_counts(model, model.out_channels()).sum()
    return float(1.0 - layer_flops_from_counts(model, out_counts).sum() / total)


def simulated_accuracy(model: ModelSpec, X: Sequence[float], recovery_level: float,
                       base_accuracy: float = DEFAULT_BASE_ACCURACY) -> float:
    X = as_pruning_vector(X, model.L)
    return accuracy_from_ratio(base_accuracy, flops_reduction(model, pruned_out_channels(model, X)), recovery_level)


@dataclass(frozen=True)
class FitnessEval:
    """One fitness evaluation with the quantities it was built from."""

    fitness: float
    latency_ratio: float
    latency_estimate: float
    accuracy: float
    feasible: bool


@dataclass
class FitnessContext:
    """Everything needed to score a pruning vector.

    ``features`` maps a search vector to surrogate features (identity by
    default). Latency is normalized by the suite's estimate at all-zero
    features, i.e. the unpruned model.
    """

    suite: SurrogateSuite
    accuracy_oracle: Callable[[np.ndarray], float]
    base_accuracy: float
    alpha: float
    features: Callable[[np.ndarray], np.ndarray] | None = None
    reference_latency: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.alpha == 1.0:
            raise ConfigError("alpha = 1 makes the accuracy penalty divide by zero")
        if not 0.0 <= self.base_accuracy <= 1.0:
            raise ConfigError(f"base_accuracy must lie in [0, 1], got {self.base_accuracy}")
        self.reference_latency = estimate_average_latency(self.suite, np.zeros(self.suite.n_features))

    @property
    def threshold(self) -> float:
        return self.alpha * self.base_accuracy

    def penalty(self, accuracy: float) -> float:
        if accuracy >= self.threshold:
            return 0.0
        return (1.0 - accuracy) / (1.0 - self.alpha)

    def evaluate(self, X) -> FitnessEval:
        X = np.asarray(X, dtype=np.float64)
        feats = self.features(X) if self.features is not None else X
        latency = estimate_average_latency(self.suite, feats)
        ratio = latency / self.reference_latency
        acc = float(self.accuracy_oracle(X))
        pen = self.penalty(acc)
        return FitnessEval(ratio + pen, ratio, latency, acc, pen == 0.0)


def fitness(X, ctx: FitnessContext) -> float:
    """Normalized latency estimate, plus (1 - a) / (1 - alpha) if accuracy misses the threshold."""
    return ctx.evaluate(X).fitness
