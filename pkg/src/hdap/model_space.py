"""Abstract chain-structured DNN description, structured pruning and FLOPs.

A model is an ordered chain of conv / fully-connected layers. Pruning removes
whole output filters from prunable layers, lowest importance first, and
shrinks the successor layer's input channels to match.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, ModelSpecError

X_MAX = 0.95

LAYER_KINDS = ("conv", "fc")


@dataclass(frozen=True)
class LayerSpec:
    layer_id: int
    kind: str
    in_channels: int
    out_channels: int
    kernel_h: int = 1
    kernel_w: int = 1
    out_h: int = 1
    out_w: int = 1
    prunable: bool = True
    importance: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "importance", tuple(float(v) for v in self.importance))
        if self.kind not in LAYER_KINDS:
            raise ModelSpecError(f"layer {self.layer_id}: kind must be one of {LAYER_KINDS}, got {self.kind!r}")
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "out_h", "out_w"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ModelSpecError(f"layer {self.layer_id}: {name} must be a positive integer, got {value!r}")
        if len(self.importance) != self.out_channels:
            raise ModelSpecError(
                f"layer {self.layer_id}: importance has {len(self.importance)} entries, "
                f"expected out_channels={self.out_channels}"
            )
        imp = np.asarray(self.importance)
        if imp.size and (not np.all(np.isfinite(imp)) or imp.min() < 0):
            raise ModelSpecError(f"layer {self.layer_id}: importance values must be finite and non-negative")

    @property
    def flops(self) -> int:
        return 2 * self.kernel_h * self.kernel_w * self.in_channels * self.out_channels * self.out_h * self.out_w

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_h": self.kernel_h,
            "kernel_w": self.kernel_w,
            "out_h": self.out_h,
            "out_w": self.out_w,
            "prunable": self.prunable,
            "importance": list(self.importance),
        }


@dataclass(frozen=True)
class ModelSpec:
    """An immutable chain of layers.

    ``L`` is the number of prunable layers, i.e. the length of every pruning
    vector applied to this model.
    """

    name: str
    layers: tuple[LayerSpec, ...]
    _digest: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ModelSpecError(
                    f"layer {nxt.layer_id}: in_channels={nxt.in_channels} does not match "
                    f"out_channels={prev.out_channels} of layer {prev.layer_id}"
                )
        object.__setattr__(self, "_digest", _structure_digest(self.layers, [l.out_channels for l in self.layers]))

    @property
    def L(self) -> int:
        return sum(1 for l in self.layers if l.prunable)

    @property
    def prunable_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.prunable]

    @property
    def structure_hash(self) -> int:
        """64-bit integer digest of the layer geometry (importance excluded)."""
        return int(self._digest[:16], 16)

    def structure_hash_for_counts(self, out_counts) -> int:
        """``structure_hash`` of this model re-shaped to ``out_counts``, without building it."""
        return int(_structure_digest(self.layers, [int(c) for c in out_counts])[:16], 16)

    def out_channels(self) -> np.ndarray:
        return np.array([l.out_channels for l in self.layers], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return model_from_dict(data)


def _structure_digest(layers, out_counts) -> str:
    in_counts = [layers[0].in_channels] + list(out_counts[:-1]) if layers else []
    structure = [
        (l.kind, int(c_in), int(c_out), l.kernel_h, l.kernel_w, l.out_h, l.out_w, l.prunable)
        for l, c_in, c_out in zip(layers, in_counts, out_counts)
    ]
    return hashlib.sha256(json.dumps(structure).encode()).hexdigest()


def model_from_dict(data: dict) -> ModelSpec:
    """Build a :class:`ModelSpec` from a JSON-like dict, naming the bad field on error."""
    if not isinstance(data, dict):
        raise ModelSpecError("model document must be a JSON object")
    if "name" not in data:
        raise ModelSpecError("missing field 'name'")
    raw_layers = data.get("layers")
    if not isinstance(raw_layers, list):
        raise ModelSpecError("field 'layers' must be a list")
    layers = []
    for i, raw in enumerate(raw_layers):
        if not isinstance(raw, dict):
            raise ModelSpecError(f"layers[{i}]: expected an object")
        kind = raw.get("kind")
        defaults = {"kernel_h": 1, "kernel_w": 1, "out_h": 1, "out_w": 1, "prunable": True}
        for required in ("kind", "in_channels", "out_channels", "importance"):
            if required not in raw:
                raise ModelSpecError(f"layers[{i}].{required}: missing field")
        if kind == "conv":
            for required in ("kernel_h", "kernel_w", "out_h", "out_w"):
                if required not in raw:
                    raise ModelSpecError(f"layers[{i}].{required}: missing field")
        kwargs = {**defaults, **{k: v for k, v in raw.items() if k != "layer_id"}}
        unknown = set(kwargs) - set(LayerSpec.__dataclass_fields__)
        if unknown:
            raise ModelSpecError(f"layers[{i}]: unknown fields {sorted(unknown)}")
        if not isinstance(kwargs["importance"], list):
            raise ModelSpecError(f"layers[{i}].importance: expected an array of numbers")
        try:
            layers.append(LayerSpec(layer_id=raw.get("layer_id", i), **kwargs))
        except ModelSpecError as exc:
            raise ModelSpecError(f"layers[{i}]: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ModelSpecError(f"layers[{i}]: {exc}") from None
    try:
        return ModelSpec(name=str(data["name"]), layers=tuple(layers))
    except ModelSpecError as exc:
        raise ModelSpecError(f"layers: {exc}") from None


def load_model(path: str | Path) -> ModelSpec:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return model_from_dict(data)
    except ModelSpecError as exc:
        raise ModelSpecError(f"{path}: {exc}") from None


def save_model(model: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def as_pruning_vector(values: Sequence[float], L: int, x_max: float = X_MAX) -> np.ndarray:
    """Validate a pruning vector of length ``L`` with entries in ``[0, x_max]``."""
    X = np.asarray(values, dtype=np.float64)
    if X.ndim != 1 or X.shape[0] != L:
        raise DimensionError(f"pruning vector has shape {X.shape}, expected ({L},)")
    if not np.all(np.isfinite(X)) or np.any(X < 0.0) or np.any(X > x_max):
        raise DomainError(f"pruning ratios must lie in [0, {x_max}]")
    return X


def removed_counts(n_filters: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Number of filters removed per layer: floor(x * n), keeping at least one."""
    removed = np.floor(X * n_filters).astype(np.int64)
    return np.minimum(removed, n_filters - 1)


def pruned_out_channels(model: ModelSpec, X: np.ndarray) -> np.ndarray:
    """Out-channel count of every layer after ``prune(model, X)``, without building the model."""
    counts = model.out_channels()
    idx = model.prunable_indices
    counts[idx] -= removed_counts(counts[idx], np.asarray(X, dtype=np.float64))
    return counts


def layer_flops_from_counts(model: ModelSpec, out_counts: np.ndarray) -> np.ndarray:
    """Per-layer FLOPs of ``model`` re-shaped to the given out-channel counts."""
    if not model.layers:
        return np.zeros(0, dtype=np.float64)
    out_counts = np.asarray(out_counts, dtype=np.float64)
    in_counts = np.empty_like(out_counts)
    in_counts[0] = model.layers[0].in_channels
    in_counts[1:] = out_counts[:-1]
    geom = np.array([2.0 * l.kernel_h * l.kernel_w * l.out_h * l.out_w for l in model.layers])
    return geom * in_counts * out_counts


def prune(model: ModelSpec, X: Sequence[float], x_max: float = X_MAX) -> ModelSpec:
    """Remove the ``floor(x_l * n_l)`` least important filters of each prunable layer.

    Ties on importance remove the lower filter index first. Surviving filters
    keep their original relative order.
    """
    X = as_pruning_vector(X, model.L, x_max)
    layers = list(model.layers)
    for x, i in zip(X, model.prunable_indices):
        layer = layers[i]
        n = layer.out_channels
        k = int(removed_counts(np.array([n]), np.array([x]))[0])
        if k == 0:
            continue
        # stable sort on importance: equal scores keep index order, so lower index goes first
        order = np.argsort(np.asarray(layer.importance), kind="stable")
        keep = np.sort(order[k:])
        layers[i] = _replace(layer, out_channels=n - k, importance=tuple(layer.importance[j] for j in keep))
        if i + 1 < len(layers):
            layers[i + 1] = _replace(layers[i + 1], in_channels=n - k)
    return ModelSpec(name=model.name, layers=tuple(layers))


def _replace(layer: LayerSpec, **changes) -> LayerSpec:
    fields = layer.to_dict()
    fields.update(changes)
    return LayerSpec(**fields)


def flops(model: ModelSpec) -> int:
    return sum(l.flops for l in model.layers)


def encode_features(X: Sequence[float]) -> np.ndarray:
    return np.array(X, dtype=np.float64)


def decode_features(features: Sequence[float]) -> np.ndarray:
    return np.array(features, dtype=np.float64)


# --- synthetic architectures -------------------------------------------------

VGG16_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def vgg16_cifar(seed: int = 0, num_classes: int = 10) -> ModelSpec:
    """VGG16 for 32x32 inputs: 13 prunable 3x3 convs and a fixed classifier.

    Filter importance scores are drawn as |N(0, 1)| + 0.01 from ``seed``.
    """
    rng = np.random.default_rng(seed)
    layers = []
    in_ch, size = 3, 32
    for item in VGG16_CFG:
        if item == "M":
            size //= 2
            continue
        layers.append(
            LayerSpec(
                layer_id=len(layers), kind="conv", in_channels=in_ch, out_channels=item,
                kernel_h=3, kernel_w=3, out_h=size, out_w=size,
                importance=tuple(np.abs(rng.standard_normal(item)) + 0.01),
            )
        )
        in_ch = item
    layers.append(
        LayerSpec(
            layer_id=len(layers), kind="fc", in_channels=in_ch, out_channels=num_classes,
            prunable=False, importance=tuple(np.ones(num_classes)),
        )
    )
    return ModelSpec(name="vgg16-cifar", layers=tuple(layers))


def chain_model(widths: Sequence[int], spatial: Sequence[int] | None = None, seed: int = 0,
                name: str = "chain", num_classes: int = 10) -> ModelSpec:
    """Small conv chain used in tests and examples; the last layer is a fixed classifier."""
    rng = np.random.default_rng(seed)
    spatial = list(spatial) if spatial is not None else [8] * len(widths)
    layers = []
    in_ch = 3
    for i, (w, s) in enumerate(zip(widths, spatial)):
        layers.append(
            LayerSpec(i, "conv", in_ch, int(w), 3, 3, int(s), int(s),
                      importance=tuple(np.abs(rng.standard_normal(int(w))) + 0.01))
        )
        in_ch = int(w)
    layers.append(LayerSpec(len(layers), "fc", in_ch, num_classes, prunable=False,
                            importance=tuple(np.ones(num_classes))))
    return ModelSpec(name=name, layers=tuple(layers))
