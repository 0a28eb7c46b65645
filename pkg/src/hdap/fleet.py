"""Simulated / ingested fleets of homogeneous devices and their latency measurements."""
from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ConfigError, DomainError, IngestionError
from .model_space import ModelSpec, layer_flops_from_counts

THROUGHPUT = 1e8  # FLOPs per ms
LAYER_OVERHEAD_MS = 0.05
NOISE_FLOOR = 0.1  # a noisy sample never drops below this fraction of the noiseless value


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    scale: float
    noise_std: float = 0.0
    latent_group: int | None = None

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError(f"device {self.device_id}: scale must be positive, got {self.scale}")
        if not self.noise_std >= 0:
            raise DomainError(f"device {self.device_id}: noise_std must be non-negative")


@dataclass(frozen=True)
class Fleet:
    devices: tuple[DeviceProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        ids = [d.device_id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise DomainError("device ids must be unique")

    def __len__(self) -> int:
        return len(self.devices)

    def __iter__(self) -> Iterator[DeviceProfile]:
        return iter(self.devices)

    def __getitem__(self, i):
        return self.devices[i]

    @property
    def ids(self) -> list[str]:
        return [d.device_id for d in self.devices]

    @property
    def scales(self) -> np.ndarray:
        return np.array([d.scale for d in self.devices])

    def by_id(self, device_id: str) -> DeviceProfile:
        for d in self.devices:
            if d.device_id == device_id:
                return d
        raise KeyError(device_id)

    def to_json(self) -> str:
        return json.dumps([asdict(d) for d in self.devices], indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Fleet":
        try:
            rows = json.loads(text)
            return cls(tuple(DeviceProfile(**row) for row in rows))
        except (json.JSONDecodeError, TypeError) as exc:
            raise IngestionError(f"invalid fleet document: {exc}") from None


def save_fleet(fleet: Fleet, path: str | Path) -> None:
    Path(path).write_text(fleet.to_json() + "\n")


def load_fleet(path: str | Path) -> Fleet:
    return Fleet.from_json(Path(path).read_text())


@dataclass(frozen=True)
class FleetConfig:
    n_devices: int = 60
    n_groups: int = 3
    group_scales: tuple[float, ...] = (1.0, 1.15, 1.35)
    within_group_spread: float = 0.02
    noise_std: float = 0.03
    reps: int = 30
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "group_scales", tuple(float(s) for s in self.group_scales))
        if self.n_devices < 1:
            raise ConfigError("n_devices must be at least 1")
        if not 1 <= self.n_groups <= self.n_devices:
            raise ConfigError("n_groups must lie in [1, n_devices]")
        if len(self.group_scales) != self.n_groups:
            raise ConfigError(f"group_scales has {len(self.group_scales)} entries, expected {self.n_groups}")
        if any(s <= 0 for s in self.group_scales):
            raise ConfigError("group_scales must be strictly positive")
        if self.within_group_spread < 0 or self.noise_std < 0:
            raise ConfigError("within_group_spread and noise_std must be non-negative")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")


@dataclass(frozen=True)
class LatencyMeasurement:
    device_id: str
    mean_ms: float
    std_ms: float
    reps: int


def simulate_fleet(cfg: FleetConfig) -> Fleet:
    """Devices are assigned round-robin to planted groups, then jittered around the group scale."""
    rng = np.random.default_rng(cfg.seed)
    jitter = rng.standard_normal(cfg.n_devices)
    devices = []
    for i in range(cfg.n_devices):
        g = i % cfg.n_groups
        scale = cfg.group_scales[g] * (1.0 + cfg.within_group_spread * jitter[i])
        scale = max(scale, 1e-3 * cfg.group_scales[g])
        devices.append(DeviceProfile(f"dev-{i:03d}", float(scale), cfg.noise_std, g))
    return Fleet(tuple(devices))


# --- cost model ----------------------------------------------------------------

def base_latency_from_counts(model: ModelSpec, out_counts: np.ndarray) -> float:
    per_layer = layer_flops_from_counts(model, out_counts)
    return float(np.sum(per_layer / THROUGHPUT + LAYER_OVERHEAD_MS))


def base_latency(model: ModelSpec) -> float:
    """Noiseless latency (ms) of ``model`` on a device with scale 1."""
    return base_latency_from_counts(model, model.out_channels())


def _device_key(device_id: str) -> int:
    return int.from_bytes(hashlib.sha256(device_id.encode()).digest()[:8], "little")


def _samples(device: DeviceProfile, base: float, model_key: int, reps: int, seed: int) -> np.ndarray:
    clean = base * device.scale
    if device.noise_std == 0:
        return np.full(reps, clean)
    # independent stream per (seed, device, model); rep r is the r-th draw of that stream
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, _device_key(device.device_id), model_key])
    factor = 1.0 + device.noise_std * rng.standard_normal(reps)
    return clean * np.maximum(factor, NOISE_FLOOR)


def _mean(device: DeviceProfile, base: float, model_key: int, reps: int, seed: int) -> float:
    if device.noise_std == 0:
        return base * device.scale  # exact, not a float-summed mean of equal samples
    return float(np.mean(_samples(device, base, model_key, reps, seed)))


def measure_latency(device: DeviceProfile, model: ModelSpec, reps: int = 30, seed: int = 0) -> LatencyMeasurement:
    if reps < 1:
        raise DomainError("reps must be at least 1")
    base = base_latency(model)
    samples = _samples(device, base, model.structure_hash, reps, seed)
    std = float(np.std(samples, ddof=1)) if reps > 1 and device.noise_std > 0 else 0.0
    return LatencyMeasurement(device.device_id, _mean(device, base, model.structure_hash, reps, seed), std, reps)


def measure_fleet(fleet: Fleet, model: ModelSpec, reps: int = 30, seed: int = 0) -> np.ndarray:
    """Mean measured latency of ``model`` on every device, in fleet order."""
    base = base_latency(model)
    key = model.structure_hash
    return np.array([_mean(d, base, key, reps, seed) for d in fleet])


def measure_fleet_counts(fleet: Fleet, model: ModelSpec, out_counts: np.ndarray, reps: int = 30,
                         seed: int = 0) -> np.ndarray:
    """:func:`measure_fleet` for ``model`` re-shaped to ``out_counts`` (same values, no model built)."""
    base = base_latency_from_counts(model, out_counts)
    key = model.structure_hash_for_counts(out_counts)
    return np.array([_mean(d, base, key, reps, seed) for d in fleet])


def average_latency(fleet: Fleet, model: ModelSpec, reps: int = 30, seed: int = 0) -> float:
    if len(fleet) == 0:
        raise DomainError("average latency of an empty fleet is undefined")
    return float(np.mean(measure_fleet(fleet, model, reps, seed)))


def benchmark_features(fleet: Fleet, benchmark: ModelSpec, reps: int = 30, seed: int = 0) -> np.ndarray:
    """One row per device: the benchmark model's measured mean latency (ms)."""
    if len(fleet) == 0:
        raise DomainError("fleet is empty")
    return measure_fleet(fleet, benchmark, reps, seed).reshape(-1, 1)


# --- ingestion -----------------------------------------------------------------

PROFILE_COLUMNS = ("device_id", "benchmark_model", "latency_ms")


def load_profiles(path: str | Path, benchmarks: ModelSpec | Mapping[str, ModelSpec]) -> Fleet:
    """Fit per-device scale and relative noise from raw benchmark latencies.

    ``benchmarks`` maps the ``benchmark_model`` column to model specs; a single
    spec is matched by its name. scale = mean(latency / base), noise_std = cv of
    those ratios.
    """
    if isinstance(benchmarks, ModelSpec):
        benchmarks = {benchmarks.name: benchmarks}
    bases = {name: base_latency(m) for name, m in benchmarks.items()}
    ratios: dict[str, list[float]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in PROFILE_COLUMNS if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing columns {missing}")
        for row_no, row in enumerate(reader, start=2):
            device_id = (row.get("device_id") or "").strip()
            model_name = (row.get("benchmark_model") or "").strip()
            if not device_id:
                raise IngestionError(f"{path}: row {row_no}: empty device_id")
            if model_name not in bases:
                raise IngestionError(f"{path}: row {row_no}: unknown benchmark model {model_name!r}")
            try:
                latency = float(row["latency_ms"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}: row {row_no}: latency_ms {row['latency_ms']!r} is not a number") from None
            if not np.isfinite(latency) or latency <= 0:
                raise IngestionError(f"{path}: row {row_no}: latency_ms must be positive, got {latency}")
            ratios[device_id].append(latency / bases[model_name])
    if not ratios:
        raise IngestionError(f"{path}: no measurement rows")
    devices = []
    for device_id, values in ratios.items():
        r = np.asarray(values)
        scale = float(np.mean(r))
        cv = float(np.std(r, ddof=1)) / scale if len(r) > 1 else 0.0
        devices.append(DeviceProfile(device_id, scale, cv))
    return Fleet(tuple(devices))


def write_profiles(path: str | Path, rows: Iterable[tuple[str, str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for row in rows:
            w.writerow(row)
