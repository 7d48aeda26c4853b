"""Sequential model graphs: layer types, shape checking, structure queries.

Only chain topologies are supported. Layers are plain dataclasses holding
float64 numpy parameters; a :class:`ModelGraph` is an ordered list of layers
plus the per-sample input shape. Graphs are treated as immutable -- transforms
build new graphs with copied parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FullyConnected",
    "Conv2D",
    "BatchNorm",
    "ReLU",
    "MaxPool",
    "AvgPool",
    "Flatten",
    "ChannelSplit",
    "ModelGraph",
    "is_weighted",
    "GraphError",
]


class GraphError(ValueError):
    """Structural problem in a model graph."""


@dataclass
class FullyConnected:
    name: str
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]


@dataclass
class Conv2D:
    name: str
    weight: np.ndarray  # [out, in, kh, kw]
    bias: np.ndarray  # [out]
    stride: int = 1
    pad: int = 0


@dataclass
class BatchNorm:
    """Inference-form batch norm: per-channel affine y = scale*x + shift."""

    name: str
    scale: np.ndarray  # [C]
    shift: np.ndarray  # [C]


@dataclass
class ReLU:
    name: str


@dataclass
class MaxPool:
    name: str
    kernel: int
    stride: int


@dataclass
class AvgPool:
    name: str
    kernel: int
    stride: int


@dataclass
class Flatten:
    name: str


@dataclass
class ChannelSplit:
    """Copy-and-scale layer: output channel j is scales[j] * input[sources[j]].

    Used to duplicate channels at inference time. For every original input
    channel the scales of its copies must sum to 1, which keeps the network
    functionally equivalent.
    """

    name: str
    sources: list[int]
    scales: list[float]

    def conservation(self) -> dict[int, float]:
        """Total scale per source channel (must be 1.0 for each)."""
        totals: dict[int, float] = {}
        for src, sc in zip(self.sources, self.scales):
            totals[src] = totals.get(src, 0.0) + sc
        return totals


def is_weighted(layer) -> bool:
    return isinstance(layer, (FullyConnected, Conv2D))


def _out_hw(h: int, w: int, kernel: int, stride: int, pad: int = 0) -> tuple[int, int]:
    return (h + 2 * pad - kernel) // stride + 1, (w + 2 * pad - kernel) // stride + 1


@dataclass
class ModelGraph:
    """An ordered chain of layers with a fixed per-sample input shape."""

    layers: list = field(default_factory=list)
    input_shape: tuple[int, ...] = ()

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)

    def layer(self, name: str):
        for l in self.layers:
            if l.name == name:
                return l
        raise GraphError(f"no layer named {name!r}")

    def index_of(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise GraphError(f"no layer named {name!r}")

    def copy(self) -> "ModelGraph":
        return ModelGraph(layers=[copy.deepcopy(l) for l in self.layers],
                          input_shape=self.input_shape)

    # -- shape propagation ------------------------------------------------

    def output_shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (per sample), validating consistency."""
        shapes = []
        cur = self.input_shape
        for layer in self.layers:
            cur = self._apply_shape(layer, cur)
            shapes.append(cur)
        return shapes

    def _apply_shape(self, layer, cur: tuple[int, ...]) -> tuple[int, ...]:
        if isinstance(layer, FullyConnected):
            if len(cur) != 1:
                raise GraphError(f"layer {layer.name!r}: expected flat input, got shape {cur}")
            out, inp = layer.weight.shape
            if inp != cur[0]:
                raise GraphError(
                    f"layer {layer.name!r}: weight expects {inp} inputs, got {cur[0]}")
            return (out,)
        if isinstance(layer, Conv2D):
            if len(cur) != 3:
                raise GraphError(f"layer {layer.name!r}: expected CHW input, got shape {cur}")
            out, inp, kh, kw = layer.weight.shape
            if inp != cur[0]:
                raise GraphError(
                    f"layer {layer.name!r}: weight expects {inp} channels, got {cur[0]}")
            h, w = _out_hw(cur[1], cur[2], kh, layer.stride, layer.pad)
            if h <= 0 or w <= 0:
                raise GraphError(f"layer {layer.name!r}: kernel larger than input {cur}")
            return (out, h, w)
        if isinstance(layer, BatchNorm):
            if layer.scale.shape[0] != cur[0]:
                raise GraphError(
                    f"layer {layer.name!r}: {layer.scale.shape[0]} channels vs input {cur[0]}")
            return cur
        if isinstance(layer, (MaxPool, AvgPool)):
            if len(cur) != 3:
                raise GraphError(f"layer {layer.name!r}: pooling needs CHW input, got {cur}")
            h, w = _out_hw(cur[1], cur[2], layer.kernel, layer.stride)
            if h <= 0 or w <= 0:
                raise GraphError(f"layer {layer.name!r}: kernel larger than input {cur}")
            return (cur[0], h, w)
        if isinstance(layer, Flatten):
            return (int(np.prod(cur)),)
        if isinstance(layer, ReLU):
            return cur
        if isinstance(layer, ChannelSplit):
            c = cur[0]
            if any(s < 0 or s >= c for s in layer.sources):
                raise GraphError(f"layer {layer.name!r}: source index out of range for {c} channels")
            return (len(layer.sources),) + cur[1:]
        raise GraphError(f"unknown layer type {type(layer).__name__}")

    def validate(self) -> None:
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise GraphError("duplicate layer names")
        self.output_shapes()
        for layer in self.layers:
            if isinstance(layer, ChannelSplit):
                if any(s <= 0 for s in layer.scales):
                    raise GraphError(f"layer {layer.name!r}: non-positive scale")
                for src, tot in layer.conservation().items():
                    if abs(tot - 1.0) > 1e-12:
                        raise GraphError(
                            f"layer {layer.name!r}: scales for channel {src} sum to {tot}, not 1")

    # -- structure queries -------------------------------------------------

    def weighted_layers(self) -> list:
        return [l for l in self.layers if is_weighted(l)]

    def first_weighted(self):
        for l in self.layers:
            if is_weighted(l):
                return l
        raise GraphError("model has no weighted layers")

    def input_channels(self, layer) -> int:
        """Input channel (or feature) count of a weighted layer."""
        return layer.weight.shape[1]

    def producer_info(self, consumer_name: str):
        """Locate the weighted producer feeding ``consumer_name``'s input edge.

        Returns (producer_index, [batchnorm_indices], channel_aligned) where
        channel_aligned is False when a Flatten over spatial size > 1 sits in
        between (one producer channel then maps to several consumer inputs).
        Returns (None, [], False) when the edge starts at the network input.
        """
        idx = self.index_of(consumer_name)
        shapes = [self.input_shape] + self.output_shapes()
        bns: list[int] = []
        aligned = True
        j = idx - 1
        while j >= 0:
            layer = self.layers[j]
            if is_weighted(layer):
                return j, bns, aligned
            if isinstance(layer, BatchNorm):
                bns.append(j)
            elif isinstance(layer, Flatten):
                # shapes[j] is the input shape of layer j
                spatial = int(np.prod(shapes[j][1:])) if len(shapes[j]) > 1 else 1
                if spatial != 1:
                    aligned = False
            elif isinstance(layer, ChannelSplit):
                aligned = False
            j -= 1
        return None, [], False
