"""Bit-exact serialization: the .qnt container, split-plan JSON, report CSV.

A ``.qnt`` file is a UTF-8 JSON header terminated by a single NUL byte,
followed immediately by a contiguous little-endian tensor blob. The header
declares ``format_version`` (1), named tensor references with byte offsets
and lengths, an optional layer list (models), and free-form metadata. Tensors
are 32-bit floats unless an entry carries ``"dtype": "f8"`` (used by golden
files so reference outputs keep full precision).

The same container carries three kinds of payload:

* models  -- ``layers`` + parameter tensors + ``input_shape``
* datasets -- ``inputs``, ``labels`` and ``split`` tensors (0=profile, 1=eval)
* goldens -- ``input_NNN``/``output_NNN`` pairs + recorded float accuracy
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import (
    AvgPool,
    BatchNorm,
    ChannelSplit,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    ModelGraph,
    ReLU,
)
from .ocs import SplitPlan

__all__ = [
    "FormatError",
    "load_container",
    "save_container",
    "load_model",
    "save_model",
    "load_dataset",
    "load_golden",
    "save_split_plan",
    "load_split_plan",
    "save_report",
    "Dataset",
]

FORMAT_VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class FormatError(ValueError):
    """Malformed or inconsistent .qnt container."""


def save_container(path, tensors: dict[str, np.ndarray], header_extra: dict | None = None,
                   dtypes: dict[str, str] | None = None) -> None:
    """Write a .qnt container. Tensors are stored f4 unless ``dtypes`` says f8."""
    dtypes = dtypes or {}
    refs = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        dt = dtypes.get(name, "f4")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        ref = {"shape": list(arr.shape), "offset": offset, "length": len(data)}
        if dt != "f4":
            ref["dtype"] = dt
        refs[name] = ref
        blobs.append(data)
        offset += len(data)
    header = {"format_version": FORMAT_VERSION, "tensors": refs}
    if header_extra:
        header.update(header_extra)
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(encoded)
        f.write(b"\x00")
        for b in blobs:
            f.write(b)


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a .qnt container: (header, tensors widened to float64)."""
    raw = Path(path).read_bytes()
    nul = raw.find(b"\x00")
    if nul < 0:
        raise FormatError(f"{path}: no header terminator found")
    try:
        header = json.loads(raw[:nul].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: header.format_version must be {FORMAT_VERSION}, "
            f"got {header.get('format_version')!r}")
    refs = header.get("tensors")
    if not isinstance(refs, dict):
        raise FormatError(f"{path}: header.tensors missing or not an object")
    blob = raw[nul + 1 :]
    tensors: dict[str, np.ndarray] = {}
    for name, ref in refs.items():
        for key in ("shape", "offset", "length"):
            if key not in ref:
                raise FormatError(f"{path}: header.tensors.{name}.{key} missing")
        dt = _DTYPES.get(ref.get("dtype", "f4"))
        if dt is None:
            raise FormatError(f"{path}: tensor {name!r} has unknown dtype {ref['dtype']!r}")
        shape = tuple(int(s) for s in ref["shape"])
        count = int(np.prod(shape)) if shape else 1
        if ref["length"] != count * dt.itemsize:
            raise FormatError(
                f"{path}: tensor {name!r} declares shape {shape} "
                f"({count * dt.itemsize} bytes) but length {ref['length']}")
        end = ref["offset"] + ref["length"]
        if ref["offset"] < 0 or end > len(blob):
            raise FormatError(
                f"{path}: tensor {name!r} [{ref['offset']}, {end}) overruns blob "
                f"of {len(blob)} bytes")
        flat = np.frombuffer(blob, dtype=dt, count=count, offset=ref["offset"])
        tensors[name] = flat.reshape(shape).astype(np.float64)
    return header, tensors


# -- models ---------------------------------------------------------------

def _layer_to_entry(layer, tensors: dict[str, np.ndarray]) -> dict:
    if isinstance(layer, FullyConnected):
        tensors[f"{layer.name}.weight"] = layer.weight
        tensors[f"{layer.name}.bias"] = layer.bias
        return {"type": "fc", "name": layer.name,
                "weight": f"{layer.name}.weight", "bias": f"{layer.name}.bias"}
    if isinstance(layer, Conv2D):
        tensors[f"{layer.name}.weight"] = layer.weight
        tensors[f"{layer.name}.bias"] = layer.bias
        return {"type": "conv2d", "name": layer.name,
                "weight": f"{layer.name}.weight", "bias": f"{layer.name}.bias",
                "stride": layer.stride, "pad": layer.pad}
    if isinstance(layer, BatchNorm):
        tensors[f"{layer.name}.scale"] = layer.scale
        tensors[f"{layer.name}.shift"] = layer.shift
        return {"type": "batchnorm", "name": layer.name,
                "scale": f"{layer.name}.scale", "shift": f"{layer.name}.shift"}
    if isinstance(layer, ReLU):
        return {"type": "relu", "name": layer.name}
    if isinstance(layer, MaxPool):
        return {"type": "maxpool", "name": layer.name,
                "kernel": layer.kernel, "stride": layer.stride}
    if isinstance(layer, AvgPool):
        return {"type": "avgpool", "name": layer.name,
                "kernel": layer.kernel, "stride": layer.stride}
    if isinstance(layer, Flatten):
        return {"type": "flatten", "name": layer.name}
    if isinstance(layer, ChannelSplit):
        return {"type": "channel_split", "name": layer.name,
                "sources": list(layer.sources), "scales": list(layer.scales)}
    raise FormatError(f"cannot serialize layer type {type(layer).__name__}")


def _entry_to_layer(entry: dict, tensors: dict[str, np.ndarray], path) -> object:
    kind = entry.get("type")
    name = entry.get("name")

    def tensor(key):
        ref = entry.get(key)
        if ref not in tensors:
            raise FormatError(f"{path}: layer {name!r} references missing tensor {ref!r}")
        return tensors[ref]

    if kind == "fc":
        return FullyConnected(name=name, weight=tensor("weight"), bias=tensor("bias"))
    if kind == "conv2d":
        return Conv2D(name=name, weight=tensor("weight"), bias=tensor("bias"),
                      stride=int(entry.get("stride", 1)), pad=int(entry.get("pad", 0)))
    if kind == "batchnorm":
        return BatchNorm(name=name, scale=tensor("scale"), shift=tensor("shift"))
    if kind == "relu":
        return ReLU(name=name)
    if kind == "maxpool":
        return MaxPool(name=name, kernel=int(entry["kernel"]), stride=int(entry["stride"]))
    if kind == "avgpool":
        return AvgPool(name=name, kernel=int(entry["kernel"]), stride=int(entry["stride"]))
    if kind == "flatten":
        return Flatten(name=name)
    if kind == "channel_split":
        return ChannelSplit(name=name, sources=[int(s) for s in entry["sources"]],
                            scales=[float(s) for s in entry["scales"]])
    raise FormatError(f"{path}: unknown layer type {kind!r} in layer {name!r}")


def load_model(path) -> ModelGraph:
    """Load a model container into a validated graph (tensors widened to f64)."""
    header, tensors = load_container(path)
    entries = header.get("layers")
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: header.layers missing or empty")
    if "input_shape" not in header:
        raise FormatError(f"{path}: header.input_shape missing")
    layers = [_entry_to_layer(e, tensors, path) for e in entries]
    model = ModelGraph(layers=layers, input_shape=tuple(header["input_shape"]))
    model.validate()
    return model


def save_model(model: ModelGraph, path, metadata: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    entries = [_layer_to_entry(l, tensors) for l in model.layers]
    extra = {"kind": "model", "layers": entries, "input_shape": list(model.input_shape)}
    if metadata:
        extra["metadata"] = metadata
    save_container(path, tensors, extra)


# -- datasets and goldens ---------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Labeled samples partitioned into disjoint profile/eval splits."""

    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # 0 = profile, 1 = eval
    metadata: dict

    @property
    def profile_inputs(self) -> np.ndarray:
        return self.inputs[self.split == 0]

    @property
    def eval_inputs(self) -> np.ndarray:
        return self.inputs[self.split == 1]

    @property
    def eval_labels(self) -> np.ndarray:
        return self.labels[self.split == 1]


def load_dataset(path) -> Dataset:
    header, tensors = load_container(path)
    for name in ("inputs", "labels", "split"):
        if name not in tensors:
            raise FormatError(f"{path}: dataset tensor {name!r} missing")
    n = tensors["inputs"].shape[0]
    if tensors["labels"].shape != (n,) or tensors["split"].shape != (n,):
        raise FormatError(f"{path}: labels/split must have shape ({n},)")
    return Dataset(
        inputs=tensors["inputs"],
        labels=tensors["labels"].astype(np.int64),
        split=tensors["split"].astype(np.int64),
        metadata=header.get("metadata", {}),
    )


def load_golden(path) -> tuple[list[tuple[np.ndarray, np.ndarray]], dict]:
    """Load golden (input, output) pairs and the recorded metadata."""
    header, tensors = load_container(path)
    meta = header.get("metadata", {})
    pairs = []
    i = 0
    while f"input_{i:03d}" in tensors:
        out_name = f"output_{i:03d}"
        if out_name not in tensors:
            raise FormatError(f"{path}: golden pair {i} has no output tensor")
        pairs.append((tensors[f"input_{i:03d}"], tensors[out_name]))
        i += 1
    if not pairs:
        raise FormatError(f"{path}: no golden input/output pairs found")
    return pairs, meta


# -- split plans and reports -------------------------------------------------

def save_split_plan(plan: SplitPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")


def load_split_plan(path) -> SplitPlan:
    return SplitPlan.from_dict(json.loads(Path(path).read_text()))


REPORT_COLUMNS = [
    "model", "target", "bits", "clip_method", "ocs_ratio", "qa",
    "accuracy_or_mse", "rel_weight_size", "rel_act_size",
]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def save_report(rows, path) -> None:
    """Write report rows as CSV: fixed column order, 6-significant-digit floats.

    Output is byte-deterministic for identical inputs; caller fixes row order.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no report rows to write")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in REPORT_COLUMNS])
