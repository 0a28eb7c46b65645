"""The iterative prune / fine-tune loop driven by surrogate-evaluated search."""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
import numpy as np

from .cluster import DEFAULT_MIN_PTS, ClusterPartition, cluster_fleet
from .errors import ConfigError, DomainError, HdapError
from .fleet import Fleet, FleetConfig, load_profiles, measure_fleet_counts, simulate_fleet
from .model_space import X_MAX, ModelSpec, flops, layer_flops_from_counts, load_model, prune, removed_counts, vgg16_cifar
from .search.fitness import DEFAULT_BASE_ACCURACY, FitnessContext, FitnessEval, accuracy_from_ratio
from .search.ncs import NcsConfig, ncs_minimize
from .surrogate.gbrt import GbrtParams
from .surrogate.suite import MODES, compare_modes, estimate_average_latency, fit_suite, measure_matrix, sample_vectors

BUILTIN_MODELS = {"vgg16-cifar": vgg16_cifar}
ACCURACY_TIMINGS = ("pre", "post")


@dataclass(frozen=True)
class HdapConfig:
    """Run configuration. ``seed`` drives the fleet, measurements, sampling and search;
    the ``seed`` fields of the nested fleet and NCS configs are overridden by it."""

    T: int = 20
    ncs: NcsConfig = NcsConfig()
    alpha: float = 0.5
    fleet: FleetConfig = FleetConfig()
    fleet_profiles: str | None = None
    model_path: str | None = None
    builtin_model: str = "vgg16-cifar"
    gbrt: GbrtParams = GbrtParams()
    mode: str = "clustering"
    per_iteration_prune_cap: float = 0.3
    samples: int = 500
    base_accuracy: float = DEFAULT_BASE_ACCURACY
    accuracy_timing: str = "pre"
    representative_only: bool = False
    eps: float | None = None
    min_pts: int = DEFAULT_MIN_PTS
    mape_compare: bool = True
    mape_train: int = 100
    mape_test: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.per_iteration_prune_cap <= X_MAX:
            raise ConfigError(f"per_iteration_prune_cap must lie in (0, {X_MAX}]")
        if self.samples < 2:
            raise ConfigError("samples must be at least 2")
        if not 0.0 <= self.base_accuracy <= 1.0:
            raise ConfigError("base_accuracy must lie in [0, 1]")
        if self.accuracy_timing not in ACCURACY_TIMINGS:
            raise ConfigError(f"accuracy_timing must be one of {ACCURACY_TIMINGS}")
        if self.model_path is None and self.builtin_model not in BUILTIN_MODELS:
            raise ConfigError(f"unknown builtin model {self.builtin_model!r}")
        if self.mape_train < 2 or self.mape_test < 1:
            raise ConfigError("mape_train must be >= 2 and mape_test >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HdapConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = dict(data)
        nested = {"ncs": NcsConfig, "fleet": FleetConfig, "gbrt": GbrtParams}
        try:
            for key, typ in nested.items():
                if key in kwargs:
                    sub = kwargs[key]
                    if not isinstance(sub, dict):
                        raise ConfigError(f"{key}: expected an object")
                    sub_known = {f.name for f in dataclasses.fields(typ)}
                    bad = set(sub) - sub_known
                    if bad:
                        raise ConfigError(f"{key}: unknown keys {sorted(bad)}")
                    kwargs[key] = typ(**sub)
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "HdapConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)


def load_run_model(cfg: HdapConfig) -> ModelSpec:
    if cfg.model_path is not None:
        return load_model(cfg.model_path)
    return BUILTIN_MODELS[cfg.builtin_model]()


def load_run_fleet(cfg: HdapConfig, model: ModelSpec) -> Fleet:
    if cfg.fleet_profiles is not None:
        return load_profiles(cfg.fleet_profiles, {model.name: model, **{k: f() for k, f in BUILTIN_MODELS.items()}})
    return simulate_fleet(replace(cfg.fleet, seed=cfg.seed))


def iteration_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, t]).generate_state(1, np.uint64)[0])


# --- pruning state ---------------------------------------------------------------

@dataclass(frozen=True)
class PruneState:
    """The current reference model, held as out-channel counts of the original model.

    ``recovered_ratio`` is the FLOPs reduction up to which accuracy has been
    recovered by fine-tuning.
    """

    model: ModelSpec
    counts: np.ndarray
    base_accuracy: float
    recovered_ratio: float = 0.0

    @classmethod
    def initial(cls, model: ModelSpec, base_accuracy: float) -> "PruneState":
        return cls(model, model.out_channels(), base_accuracy)

    @property
    def prunable_counts(self) -> np.ndarray:
        return self.counts[self.model.prunable_indices]

    def cumulative_ratios(self, counts: np.ndarray | None = None) -> np.ndarray:
        """Per prunable layer, the fraction of the original filters removed so far."""
        c = self.counts if counts is None else counts
        idx = self.model.prunable_indices
        return 1.0 - c[idx] / self.model.out_channels()[idx]

    def counts_after(self, x: np.ndarray) -> np.ndarray:
        counts = self.counts.copy()
        idx = self.model.prunable_indices
        counts[idx] -= removed_counts(counts[idx], np.asarray(x, dtype=np.float64))
        return counts

    def flops(self, counts: np.ndarray | None = None) -> float:
        return float(layer_flops_from_counts(self.model, self.counts if counts is None else counts).sum())

    def flops_ratio(self, counts: np.ndarray | None = None) -> float:
        return 1.0 - self.flops(counts) / flops(self.model)

    def accuracy(self, counts: np.ndarray | None = None, recovered: bool = False) -> float:
        """Simulated accuracy of the reference re-shaped to ``counts``.

        Before fine-tuning only the part of the FLOPs reduction that was
        already recovered counts as recovered: level (recovered / rho)^2.
        """
        rho = self.flops_ratio(counts)
        if recovered or rho <= self.recovered_ratio:
            level = 1.0
        else:
            level = float(np.clip((self.recovered_ratio / rho) ** 2, 0.0, 1.0))
        return accuracy_from_ratio(self.base_accuracy, rho, level)

    def upper_bounds(self, cap: float, x_max: float = X_MAX) -> np.ndarray:
        """Per-layer bound on this iteration's ratios so the cumulative ratio stays <= x_max."""
        n = self.prunable_counts.astype(np.float64)
        n0 = self.model.out_channels()[self.model.prunable_indices]
        floor_count = np.ceil(n0 * (1.0 - x_max) - 1e-9)
        return np.clip(np.minimum(cap, (n - floor_count) / n), 0.0, cap)


def apply_pruning(state: PruneState, x: np.ndarray) -> PruneState:
    return replace(state, counts=state.counts_after(x))


def fine_tune_sim(state: PruneState, x: np.ndarray | None = None) -> PruneState:
    """Mark the FLOPs reduction reached so far as recovered. Idempotent."""
    return replace(state, recovered_ratio=max(state.recovered_ratio, state.flops_ratio()))


# --- records -------------------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    best_x: list
    cumulative_x: list
    fitness: float
    surrogate_latency_estimate: float
    measured_cluster_latency: dict
    measured_average_latency: float
    accuracy_before: float
    accuracy_after: float
    flops: float
    infeasible: bool
    evaluations: int
    hardware_time_s: float
    surrogate_time_wall_s: float


@dataclass
class RunReport:
    config: dict
    fleet: dict
    partition: dict
    baseline: dict
    final: dict
    iterations: list[IterationRecord]
    cluster_latency: dict
    mape: dict
    acceleration: dict
    eval_hardware_s: list
    trace: dict
    timing: dict = field(default_factory=dict)

    @property
    def any_infeasible(self) -> bool:
        return any(r.infeasible for r in self.iterations)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["iterations"] = [dataclasses.asdict(r) for r in self.iterations]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        data = dict(data)
        data["iterations"] = [IterationRecord(**r) for r in data["iterations"]]
        return cls(**data)


def _cluster_means(latencies: np.ndarray, fleet: Fleet, partition: ClusterPartition) -> dict[str, float]:
    ids = fleet.ids
    return {
        str(k): float(np.mean([latencies[ids.index(d)] for d in partition.members(k)]))
        for k in range(1, partition.K + 1)
    }


def _cluster_lists(latencies: np.ndarray, fleet: Fleet, partition: ClusterPartition) -> dict[str, dict]:
    ids = fleet.ids
    return {
        str(k): {d: float(latencies[ids.index(d)]) for d in partition.members(k)}
        for k in range(1, partition.K + 1)
    }


# --- the loop -------------------------------------------------------------------------

def run_hdap(cfg: HdapConfig, model: ModelSpec | None = None, fleet: Fleet | None = None) -> RunReport:
    """Cluster the fleet, fit the surrogate suite once, then T rounds of search, prune and fine-tune."""
    wall0 = time.perf_counter()
    model = load_run_model(cfg) if model is None else model
    fleet = load_run_fleet(cfg, model) if fleet is None else fleet
    if model.L == 0:
        raise DomainError("model has no prunable layers")
    reps = cfg.fleet.reps
    scale_sum = float(np.sum(fleet.scales))

    partition = cluster_fleet(fleet, model, cfg.eps, cfg.min_pts, reps, cfg.seed)

    t0 = time.perf_counter()
    vectors = sample_vectors(model.L, cfg.samples, cfg.seed)
    latencies = measure_matrix(fleet, model, vectors, reps, cfg.seed)
    try:
        suite = fit_suite(cfg.mode, vectors, latencies, fleet, partition, cfg.gbrt, cfg.representative_only)
    except HdapError as exc:
        raise type(exc)(f"surrogate training failed: {exc}") from None
    build_wall = time.perf_counter() - t0

    state = PruneState.initial(model, cfg.base_accuracy)
    base_lat = measure_fleet_counts(fleet, model, state.counts, reps, cfg.seed)
    baseline = {
        "average_latency_ms": float(np.mean(base_lat)),
        "cluster_latency_ms": _cluster_means(base_lat, fleet, partition),
        "accuracy": cfg.base_accuracy,
        "flops": state.flops(),
        "surrogate_estimate_ms": estimate_average_latency(suite, np.zeros(model.L)),
    }

    records: list[IterationRecord] = []
    eval_hw: list[float] = []
    eval_sur: list[float] = []
    trace_cols: dict[str, list] = {k: [] for k in
                                   ("iteration", "generation", "individual", "fitness", "accuracy",
                                    "latency_estimate", "accepted")}
    hw_total = 0.0
    sur_total = 0.0
    pruned_model = model

    for t in range(1, cfg.T + 1):
        ref = state
        post = cfg.accuracy_timing == "post"

        def oracle(x, ref=ref):
            return ref.accuracy(ref.counts_after(x), recovered=post)

        ctx = FitnessContext(suite, oracle, cfg.base_accuracy, cfg.alpha,
                             features=lambda x, ref=ref: ref.cumulative_ratios(ref.counts_after(x)))

        def objective(x, ref=ref, ctx=ctx):
            nonlocal hw_total, sur_total
            s0 = time.perf_counter()
            res = ctx.evaluate(x)
            sur_total += time.perf_counter() - s0
            base_ms = layer_flops_from_counts(model, ref.counts_after(x)).sum() / 1e8 + 0.05 * len(model.layers)
            hw_total += float(reps * base_ms * scale_sum / 1000.0)
            eval_hw.append(hw_total)
            eval_sur.append(sur_total)
            return res

        ncs_cfg = replace(cfg.ncs, seed=iteration_seed(cfg.seed, t))
        upper = ref.upper_bounds(cfg.per_iteration_prune_cap)
        result = ncs_minimize(objective, model.L, ncs_cfg, upper)

        best_row, best_any = None, None
        for row in result.trace:
            ev: FitnessEval = row.info
            trace_cols["iteration"].append(t)
            trace_cols["generation"].append(row.generation)
            trace_cols["individual"].append(row.individual)
            trace_cols["fitness"].append(row.fitness)
            trace_cols["accuracy"].append(ev.accuracy)
            trace_cols["latency_estimate"].append(ev.latency_estimate)
            trace_cols["accepted"].append(row.accepted)
            if ev.feasible and (best_row is None or row.fitness < best_row.fitness):
                best_row = row
            if best_any is None or row.fitness < best_any.fitness:
                best_any = row
        infeasible = best_row is None
        chosen = best_any if infeasible else best_row
        x_star = chosen.x

        acc_before = chosen.info.accuracy
        state = fine_tune_sim(apply_pruning(ref, x_star))
        pruned_model = prune(pruned_model, x_star)
        measured = measure_fleet_counts(fleet, model, state.counts, reps, cfg.seed)
        records.append(IterationRecord(
            iteration=t,
            best_x=[float(v) for v in x_star],
            cumulative_x=[float(v) for v in state.cumulative_ratios()],
            fitness=float(chosen.fitness),
            surrogate_latency_estimate=float(chosen.info.latency_estimate),
            measured_cluster_latency=_cluster_means(measured, fleet, partition),
            measured_average_latency=float(np.mean(measured)),
            accuracy_before=float(acc_before),
            accuracy_after=state.accuracy(recovered=True),
            flops=state.flops(),
            infeasible=infeasible,
            evaluations=result.n_evaluations,
            hardware_time_s=hw_total,
            surrogate_time_wall_s=sur_total,
        ))

    if not np.array_equal(pruned_model.out_channels(), state.counts):
        raise AssertionError("count bookkeeping diverged from the pruned model")
    final_lat = measure_fleet_counts(fleet, model, state.counts, reps, cfg.seed)
    final_est = estimate_average_latency(suite, state.cumulative_ratios())
    final = {
        "average_latency_ms": float(np.mean(final_lat)),
        "cluster_latency_ms": _cluster_means(final_lat, fleet, partition),
        "accuracy": state.accuracy(recovered=True),
        "flops": state.flops(),
        "flops_reduction": state.flops_ratio(),
        "speedup": float(np.mean(base_lat) / np.mean(final_lat)),
        "surrogate_estimate_ms": final_est,
        "surrogate_relative_error": abs(final_est - float(np.mean(final_lat))) / float(np.mean(final_lat)),
        "out_channels": [int(c) for c in state.counts],
        "cumulative_x": [float(v) for v in state.cumulative_ratios()],
        "model": pruned_model.to_dict(),
    }
    cluster_latency = {
        "baseline": _cluster_lists(base_lat, fleet, partition),
        "final": _cluster_lists(final_lat, fleet, partition),
    }

    t1 = time.perf_counter()
    mape = compare_modes(fleet, partition, model, cfg.mape_train, cfg.mape_test, cfg.seed, cfg.gbrt, reps) \
        if cfg.mape_compare else {}
    mape_wall = time.perf_counter() - t1

    n_evals = len(eval_hw)
    hw_total = float(hw_total)
    hw_per_eval = hw_total / n_evals
    sur_per_eval = sur_total / n_evals
    acceleration = {
        "evaluations": n_evals,
        "reps": reps,
        "hardware_time_s": hw_total,
        "hardware_time_per_evaluation_s": hw_per_eval,
        "training_measurements": cfg.samples * len(fleet),
    }
    timing = {
        "surrogate_time_wall_s": sur_total,
        "surrogate_time_per_evaluation_wall_s": sur_per_eval,
        "acceleration_wall": hw_per_eval / sur_per_eval if sur_per_eval > 0 else None,
        "surrogate_build_wall_s": build_wall,
        "mape_compare_wall_s": mape_wall,
        "total_wall_s": time.perf_counter() - wall0,
        "eval_surrogate_cum_wall_s": eval_sur,
    }
    return RunReport(
        config=cfg.to_dict(),
        fleet={"devices": json.loads(fleet.to_json())},
        partition=partition.to_dict(),
        baseline=baseline,
        final=final,
        iterations=records,
        cluster_latency=cluster_latency,
        mape=mape,
        acceleration=acceleration,
        eval_hardware_s=eval_hw,
        trace=trace_cols,
        timing=timing,
    )

