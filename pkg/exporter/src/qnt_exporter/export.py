"""Convert trained torch models into .qnt containers with golden outputs.

Exported parameters are truncated to float32 (the container's storage
precision). Golden outputs and the recorded accuracy are computed with torch
in float64 *on the truncated parameters*, so a bit-faithful reader of the
container can reproduce them to accumulation-order precision. Batch norms are
exported (and evaluated for goldens) in inference form, y = scale*x + shift,
with scale/shift themselves truncated to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .container import write_container

SUPPORTED = (nn.Linear, nn.Conv2d, nn.BatchNorm2d, nn.ReLU, nn.MaxPool2d,
             nn.AvgPool2d, nn.Flatten)


@dataclass
class ExportManifest:
    """What to export and where, plus values recorded during the export."""

    source: str
    output: Path
    golden_output: Path | None = None
    golden_samples: int = 16
    input_shape: tuple[int, ...] = ()
    metadata: dict = field(default_factory=dict)
    layer_map: list[tuple[str, str]] = field(default_factory=list)
    float_accuracy: float | None = None


def _f4(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


class _Affine(nn.Module):
    """Per-channel y = scale*x + shift, the inference form of a batch norm."""

    def __init__(self, scale: np.ndarray, shift: np.ndarray):
        super().__init__()
        self.register_buffer("scale", torch.from_numpy(scale.astype(np.float64)))
        self.register_buffer("shift", torch.from_numpy(shift.astype(np.float64)))

    def forward(self, x):
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return x * self.scale.view(shape) + self.shift.view(shape)


def _int_pair(value, what: str) -> int:
    if isinstance(value, tuple):
        if value[0] != value[1]:
            raise ValueError(f"only square {what} supported, got {value}")
        return int(value[0])
    return int(value)


def convert_layers(module: nn.Sequential):
    """Map torch layers to container entries + tensors + a float64 twin.

    Returns (entries, tensors, golden_module, layer_map). Raises for any
    layer outside the supported set, naming it.
    """
    counters: dict[str, int] = {}

    def fresh(kind: str) -> str:
        counters[kind] = counters.get(kind, 0) + 1
        return f"{kind}{counters[kind]}"

    entries: list[dict] = []
    tensors: dict[str, np.ndarray] = {}
    golden_layers: list[nn.Module] = []
    layer_map: list[tuple[str, str]] = []

    for torch_name, layer in module.named_children():
        if not isinstance(layer, SUPPORTED):
            raise ValueError(
                f"unsupported layer {torch_name!r} of type {type(layer).__name__}; "
                f"supported: {', '.join(c.__name__ for c in SUPPORTED)}")
        if isinstance(layer, nn.Linear):
            name = fresh("fc")
            w = _f4(layer.weight)
            b = _f4(layer.bias) if layer.bias is not None else np.zeros(w.shape[0], np.float32)
            tensors[f"{name}.weight"] = w
            tensors[f"{name}.bias"] = b
            entries.append({"type": "fc", "name": name,
                            "weight": f"{name}.weight", "bias": f"{name}.bias"})
            twin = nn.Linear(w.shape[1], w.shape[0]).double()
            with torch.no_grad():
                twin.weight.copy_(torch.from_numpy(w.astype(np.float64)))
                twin.bias.copy_(torch.from_numpy(b.astype(np.float64)))
            golden_layers.append(twin)
        elif isinstance(layer, nn.Conv2d):
            if layer.groups != 1 or layer.dilation != (1, 1):
                raise ValueError(f"unsupported conv options on {torch_name!r}")
            name = fresh("conv")
            w = _f4(layer.weight)
            b = _f4(layer.bias) if layer.bias is not None else np.zeros(w.shape[0], np.float32)
            stride = _int_pair(layer.stride, "stride")
            pad = _int_pair(layer.padding, "padding")
            tensors[f"{name}.weight"] = w
            tensors[f"{name}.bias"] = b
            entries.append({"type": "conv2d", "name": name,
                            "weight": f"{name}.weight", "bias": f"{name}.bias",
                            "stride": stride, "pad": pad})
            twin = nn.Conv2d(w.shape[1], w.shape[0], w.shape[2], stride=stride,
                             padding=pad).double()
            with torch.no_grad():
                twin.weight.copy_(torch.from_numpy(w.astype(np.float64)))
                twin.bias.copy_(torch.from_numpy(b.astype(np.float64)))
            golden_layers.append(twin)
        elif isinstance(layer, nn.BatchNorm2d):
            name = fresh("bn")
            gamma = layer.weight.detach().numpy().astype(np.float64)
            beta = layer.bias.detach().numpy().astype(np.float64)
            mean = layer.running_mean.numpy().astype(np.float64)
            var = layer.running_var.numpy().astype(np.float64)
            scale = (gamma / np.sqrt(var + layer.eps)).astype(np.float32)
            shift = (beta - mean * scale.astype(np.float64)).astype(np.float32)
            tensors[f"{name}.scale"] = scale
            tensors[f"{name}.shift"] = shift
            entries.append({"type": "batchnorm", "name": name,
                            "scale": f"{name}.scale", "shift": f"{name}.shift"})
            golden_layers.append(_Affine(scale, shift))
        elif isinstance(layer, nn.ReLU):
            name = fresh("relu")
            entries.append({"type": "relu", "name": name})
            golden_layers.append(nn.ReLU())
        elif isinstance(layer, nn.MaxPool2d):
            name = fresh("maxpool")
            k = _int_pair(layer.kernel_size, "kernel")
            s = _int_pair(layer.stride or layer.kernel_size, "stride")
            entries.append({"type": "maxpool", "name": name, "kernel": k, "stride": s})
            golden_layers.append(nn.MaxPool2d(k, s))
        elif isinstance(layer, nn.AvgPool2d):
            name = fresh("avgpool")
            k = _int_pair(layer.kernel_size, "kernel")
            s = _int_pair(layer.stride or layer.kernel_size, "stride")
            entries.append({"type": "avgpool", "name": name, "kernel": k, "stride": s})
            golden_layers.append(nn.AvgPool2d(k, s))
        elif isinstance(layer, nn.Flatten):
            name = fresh("flatten")
            entries.append({"type": "flatten", "name": name})
            golden_layers.append(nn.Flatten())
        layer_map.append((torch_name, entries[-1]["name"]))
    return entries, tensors, nn.Sequential(*golden_layers).eval(), layer_map


def export_model(module: nn.Sequential, manifest: ExportManifest,
                 golden_inputs: np.ndarray | None = None,
                 eval_data: tuple[np.ndarray, np.ndarray] | None = None) -> ExportManifest:
    """Write the model container, plus goldens/accuracy if data is given.

    ``golden_inputs`` rows are stored (float64) with the float64 forward of
    the truncated model; ``eval_data`` is (inputs, labels) used to record the
    float accuracy in both containers' metadata.
    """
    entries, tensors, golden_module, layer_map = convert_layers(module)
    manifest.layer_map = layer_map
    metadata = dict(manifest.metadata)
    metadata["source"] = manifest.source

    if eval_data is not None:
        from .models import accuracy

        manifest.float_accuracy = accuracy(golden_module, eval_data[0], eval_data[1])
        metadata["float_accuracy"] = manifest.float_accuracy

    write_container(manifest.output, tensors,
                    {"kind": "model", "layers": entries,
                     "input_shape": list(manifest.input_shape),
                     "metadata": metadata})

    if manifest.golden_output is not None:
        if golden_inputs is None:
            raise ValueError("golden export requested but no golden inputs given")
        picks = np.ascontiguousarray(golden_inputs[: manifest.golden_samples],
                                     dtype=np.float32).astype(np.float64)
        with torch.no_grad():
            outputs = golden_module(torch.from_numpy(picks)).numpy()
        gtensors: dict[str, np.ndarray] = {}
        gdtypes: dict[str, str] = {}
        for i in range(len(picks)):
            gtensors[f"input_{i:03d}"] = picks[i]
            gtensors[f"output_{i:03d}"] = outputs[i]
            gdtypes[f"input_{i:03d}"] = "f8"
            gdtypes[f"output_{i:03d}"] = "f8"
        write_container(manifest.golden_output, gtensors,
                        {"kind": "golden", "metadata": metadata}, dtypes=gdtypes)
    return manifest
