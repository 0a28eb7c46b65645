"""Negatively correlated search over box-bounded pruning vectors.

A population of isotropic Gaussian search processes. Each generation every
process proposes one offspring; the offspring replaces its parent when it is
good enough relative to how far its distribution sits from the other
processes. Step sizes follow a success-rate rule evaluated once per epoch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..errors import ConfigError, DimensionError, DomainError
from ..model_space import X_MAX

_LAMBDA_STREAM = 2 ** 32  # rng stream for the per-generation trade-off coefficient
TARGET_SUCCESS = 0.2


@dataclass(frozen=True)
class NcsConfig:
    n: int = 10
    G: int = 100
    epoch: int = 10
    r: float = 0.99
    sigma0: float | None = None  # None -> 0.1 * upper
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("population size n must be at least 1")
        if self.G < 0:
            raise ConfigError("generations G must be non-negative")
        if self.epoch < 1:
            raise ConfigError("epoch must be at least 1")
        if not 0.0 < self.r < 1.0:
            raise ConfigError("r must lie in (0, 1)")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ConfigError("sigma0 must be positive")


@dataclass
class SearchIndividual:
    mean: np.ndarray
    sigma: float
    fitness: float
    success_count: int = 0
    trial_count: int = 0


@dataclass(frozen=True)
class TraceRow:
    generation: int
    individual: int
    fitness: float
    accepted: bool
    info: Any = None
    x: np.ndarray | None = None


@dataclass
class NcsResult:
    best_x: np.ndarray
    best_fitness: float
    trace: list[TraceRow] = field(default_factory=list)
    n_evaluations: int = 0
    best_info: Any = None


def bhattacharyya(mean1, sigma1: float, mean2, sigma2: float) -> float:
    """Bhattacharyya distance between N(mean1, sigma1^2 I) and N(mean2, sigma2^2 I)."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise DomainError("sigmas must be positive")
    m1 = np.atleast_1d(np.asarray(mean1, dtype=np.float64))
    m2 = np.atleast_1d(np.asarray(mean2, dtype=np.float64))
    if m1.shape != m2.shape:
        raise DimensionError("means must have equal length")
    s = 0.5 * (sigma1 * sigma1 + sigma2 * sigma2)
    diff = m1 - m2
    return float(0.125 * diff @ diff / s + 0.5 * m1.size * np.log(s / (sigma1 * sigma2)))


def _min_distance(mean, sigma, means, sigmas, skip: int) -> float:
    s = 0.5 * (sigma * sigma + sigmas * sigmas)
    d = 0.125 * np.sum((means - mean) ** 2, axis=1) / s + 0.5 * mean.size * np.log(s / (sigma * sigmas))
    d[skip] = np.inf
    return float(d.min())


def _value(result) -> float:
    return float(result.fitness) if hasattr(result, "fitness") else float(result)


def _info(result):
    return result if hasattr(result, "fitness") else None


def ncs_minimize(objective: Callable[[np.ndarray], Any], L: int, cfg: NcsConfig = NcsConfig(),
                 upper=X_MAX) -> NcsResult:
    """Minimize ``objective`` over [0, upper]^L.

    ``objective`` returns a float or an object with a ``fitness`` attribute;
    the latter is kept in the trace as ``info``. ``upper`` is a scalar or a
    per-coordinate bound. Exactly n * (G + 1) evaluations are made.
    """
    if L < 1:
        raise DimensionError("L must be at least 1")
    hi = np.broadcast_to(np.asarray(upper, dtype=np.float64), (L,)).copy()
    if np.any(hi < 0) or np.any(hi > X_MAX):
        raise DomainError(f"upper bounds must lie in [0, {X_MAX}]")
    sigma0 = cfg.sigma0 if cfg.sigma0 is not None else 0.1 * float(hi.max())
    if not sigma0 > 0:
        sigma0 = 1e-12  # degenerate box: every sample clamps to zero anyway
    n = cfg.n
    seed = cfg.seed & 0xFFFFFFFFFFFFFFFF

    trace: list[TraceRow] = []
    best = {"x": None, "f": np.inf, "info": None}

    def evaluate(x):
        res = objective(x.copy())
        f = _value(res)
        if f < best["f"]:
            best.update(x=x.copy(), f=f, info=res)
        return f, res

    pop = []
    for i in range(n):
        if i == 0:
            x = np.zeros(L)
        else:
            x = np.random.default_rng([seed, i, 0]).uniform(0.0, 1.0, L) * hi
        f, res = evaluate(x)
        trace.append(TraceRow(0, i, f, True, _info(res), x.copy()))
        pop.append(SearchIndividual(x, sigma0, f))

    for t in range(1, cfg.G + 1):
        lam_std = max(0.1 - 0.1 * t / cfg.G, 0.0)
        lam = float(np.random.default_rng([seed, _LAMBDA_STREAM, t]).normal(1.0, lam_std))
        children, child_f, child_res = [], np.empty(n), []
        for i, ind in enumerate(pop):
            z = np.random.default_rng([seed, i, t]).standard_normal(L)
            child = np.clip(ind.mean + ind.sigma * z, 0.0, hi)
            child_f[i], res = evaluate(child)
            children.append(child)
            child_res.append(res)

        parent_f = np.array([ind.fitness for ind in pop])
        if n == 1:
            accept = child_f < parent_f
        else:
            means = np.stack([ind.mean for ind in pop])
            sigmas = np.array([ind.sigma for ind in pop])
            parent_d = np.array([_min_distance(means[i], sigmas[i], means, sigmas, i) for i in range(n)])
            child_d = np.array([_min_distance(children[i], sigmas[i], means, sigmas, i) for i in range(n)])
            lo = min(parent_f.min(), child_f.min())
            f_sum = (parent_f - lo) + (child_f - lo)
            d_sum = parent_d + child_d
            with np.errstate(invalid="ignore", divide="ignore"):
                norm_f = np.where(f_sum > 0, (child_f - lo) / f_sum, 0.5)
                norm_d = np.where(d_sum > 0, child_d / d_sum, 0.5)
            accept = norm_f < lam * norm_d

        for i, ind in enumerate(pop):
            ind.trial_count += 1
            if accept[i]:
                ind.mean, ind.fitness = children[i], float(child_f[i])
                ind.success_count += 1
            trace.append(TraceRow(t, i, float(child_f[i]), bool(accept[i]), _info(child_res[i]), children[i]))

        if t % cfg.epoch == 0:
            for ind in pop:
                rate = ind.success_count / ind.trial_count
                if rate > TARGET_SUCCESS:
                    ind.sigma /= cfg.r
                elif rate < TARGET_SUCCESS:
                    ind.sigma *= cfg.r
                ind.success_count = ind.trial_count = 0

    return NcsResult(best["x"], float(best["f"]), trace, n * (cfg.G + 1), best["info"])
