"""Forward inference and structural application of split plans.

The float path evaluates a :class:`~ocsquant.graph.ModelGraph` exactly; the
fake-quantized path additionally snaps weights to their per-layer grids and
passes designated activation edges through their grids. ``apply_split_plan``
rewrites the graph so that chosen channels are duplicated while the float
outputs stay identical.
"""

from __future__ import annotations

import numpy as np

from .graph import (
    AvgPool,
    BatchNorm,
    ChannelSplit,
    Conv2D,
    Flatten,
    FullyConnected,
    GraphError,
    MaxPool,
    ModelGraph,
    ReLU,
    is_weighted,
)
from .ocs import SplitPlan
from .quant import quantize

__all__ = ["forward", "apply_split_plan", "relative_sizes"]


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Sliding pooling windows of an NCHW tensor: [N, C, Ho, Wo, k, k]."""
    n, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        (n, c, ho, wo, kernel, kernel),
        (sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _conv2d(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    w = layer.weight
    if layer.pad:
        x = np.pad(x, ((0, 0), (0, 0), (layer.pad, layer.pad), (layer.pad, layer.pad)))
    n, c, h, wd = x.shape
    _, _, kh, kw = w.shape
    ho = (h - kh) // layer.stride + 1
    wo = (wd - kw) // layer.stride + 1
    sn, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, c, ho, wo, kh, kw), (sn, sc, sh * layer.stride, sw * layer.stride, sh, sw),
        writeable=False,
    )
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    return out + layer.bias[None, :, None, None]


def _apply_layer(layer, x: np.ndarray, weight_override: np.ndarray | None = None) -> np.ndarray:
    if isinstance(layer, FullyConnected):
        w = layer.weight if weight_override is None else weight_override
        return x @ w.T + layer.bias
    if isinstance(layer, Conv2D):
        if weight_override is None:
            return _conv2d(x, layer)
        return _conv2d(x, Conv2D(layer.name, weight_override, layer.bias, layer.stride, layer.pad))
    if isinstance(layer, BatchNorm):
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return x * layer.scale.reshape(shape) + layer.shift.reshape(shape)
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, MaxPool):
        return _windows(x, layer.kernel, layer.stride).max(axis=(-2, -1))
    if isinstance(layer, AvgPool):
        return _windows(x, layer.kernel, layer.stride).mean(axis=(-2, -1))
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1)
    if isinstance(layer, ChannelSplit):
        scales = np.asarray(layer.scales, dtype=np.float64)
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return x[:, layer.sources] * scales.reshape(shape)
    raise GraphError(f"unknown layer type {type(layer).__name__}")


def forward(model: ModelGraph, x, policy=None) -> np.ndarray:
    """Run the model on a sample or batch.

    Without ``policy`` this is exact float inference. With a resolved policy,
    weighted layers with a grid in ``policy.weight_grids`` use quantized
    weights, and layer outputs named in ``policy.act_grids`` are quantized
    before flowing on.
    """
    arr = np.asarray(x, dtype=np.float64)
    batched = arr.ndim == len(model.input_shape) + 1
    if not batched:
        if arr.shape != model.input_shape:
            raise GraphError(
                f"input shape {arr.shape} does not match model input {model.input_shape}")
        arr = arr[None]
    elif arr.shape[1:] != model.input_shape:
        raise GraphError(
            f"input shape {arr.shape[1:]} does not match model input {model.input_shape}")
    h = arr
    for layer in model.layers:
        override = None
        if policy is not None and is_weighted(layer):
            grid = policy.weight_grids.get(layer.name)
            if grid is not None:
                override = quantize(layer.weight, grid)
        try:
            h = _apply_layer(layer, h, override)
        except ValueError as exc:
            raise GraphError(f"layer {layer.name!r}: {exc}") from exc
        if policy is not None:
            grid = policy.act_grids.get(layer.name)
            if grid is not None:
                h = quantize(h, grid)
    return h if batched else h[0]




def apply_split_plan(model: ModelGraph, plan: SplitPlan) -> ModelGraph:
    """Return a new graph with the plan's channel duplications applied.

    Weight targets: the producer of the split channel gains a duplicated
    output channel (weights, bias and any intervening per-channel batch-norm
    parameters copied verbatim) and the consumer's weight slice is halved into
    the original and a new trailing position. Quantization-aware adjustment of
    the halves happens later, at calibration time.

    Activation targets: a copy-and-scale layer is inserted (or extended)
    immediately before the consumer, duplicating the channel with scale 1/2 on
    both copies, and the consumer's weight slice is copied verbatim.

    The float outputs of the returned graph match the original's on any input.
    """
    out = model.copy()
    if not plan.records:
        return out
    for layer_name in plan.layers():
        records = plan.records_for(layer_name)
        if plan.target == "weights":
            _apply_weight_splits(out, layer_name, records)
        else:
            _apply_activation_splits(out, layer_name, records)
    out.validate()
    return out


def _apply_weight_splits(model: ModelGraph, layer_name: str, records) -> None:
    consumer = model.layer(layer_name)
    if not is_weighted(consumer):
        raise GraphError(f"cannot split channels of non-weighted layer {layer_name!r}")
    prod_idx, bn_idxs, aligned = model.producer_info(layer_name)
    if prod_idx is None:
        raise GraphError(
            f"layer {layer_name!r} is fed by the network input; nothing to expand")
    if not aligned:
        raise GraphError(
            f"layer {layer_name!r}: producer is not channel-aligned with the consumer")
    producer = model.layers[prod_idx]
    bns = [model.layers[i] for i in bn_idxs]
    cols = [consumer.weight[:, c] for c in range(consumer.weight.shape[1])]
    rows = [producer.weight[c] for c in range(producer.weight.shape[0])]
    bias = list(producer.bias)
    bn_params = [(list(bn.scale), list(bn.shift)) for bn in bns]
    for r in records:
        c_now = len(cols)
        if not 0 <= r.source < c_now:
            raise GraphError(
                f"layer {layer_name!r}: split source {r.source} out of range ({c_now} channels)")
        if r.new != c_now:
            raise GraphError(
                f"layer {layer_name!r}: split record expects new channel {r.new}, "
                f"but the next appended index is {c_now}")
        rows.append(rows[r.source])
        bias.append(bias[r.source])
        for scale, shift in bn_params:
            scale.append(scale[r.source])
            shift.append(shift[r.source])
        cols[r.source] = cols[r.source] / 2.0
        cols.append(cols[r.source])
    consumer.weight = np.stack(cols, axis=1)
    producer.weight = np.stack(rows, axis=0)
    producer.bias = np.array(bias)
    for bn, (scale, shift) in zip(bns, bn_params):
        bn.scale = np.array(scale)
        bn.shift = np.array(shift)


def _apply_activation_splits(model: ModelGraph, layer_name: str, records) -> None:
    idx = model.index_of(layer_name)
    consumer = model.layers[idx]
    if not is_weighted(consumer):
        raise GraphError(f"cannot split channels of non-weighted layer {layer_name!r}")
    if consumer.name == model.first_weighted().name:
        raise GraphError(
            f"layer {layer_name!r} is the first weighted layer; its input is not split")
    if idx > 0 and isinstance(model.layers[idx - 1], ChannelSplit):
        split = model.layers[idx - 1]
    else:
        c = consumer.weight.shape[1]
        split = ChannelSplit(
            name=f"split_{layer_name}", sources=list(range(c)), scales=[1.0] * c)
        model.layers.insert(idx, split)
        idx += 1
    cols = [consumer.weight[:, c] for c in range(consumer.weight.shape[1])]
    for r in records:
        c_now = len(split.sources)
        if not 0 <= r.source < c_now:
            raise GraphError(
                f"layer {layer_name!r}: split source {r.source} out of range ({c_now} channels)")
        if r.new != c_now:
            raise GraphError(
                f"layer {layer_name!r}: split record expects new channel {r.new}, "
                f"but the next appended index is {c_now}")
        split.scales[r.source] = split.scales[r.source] / 2.0
        split.sources.append(split.sources[r.source])
        split.scales.append(split.scales[r.source])
        cols.append(cols[r.source])
    consumer.weight = np.stack(cols, axis=1)


def relative_sizes(model: ModelGraph, plan: SplitPlan) -> tuple[float, float]:
    """Served-model size overhead of a plan: (rel_weight_size, rel_act_size).

    Weight overhead counts each consumer's input-channel growth, i.e. layer
    weights scale by (C + n)/C -- the cost of serving the rewritten weights
    with a runtime copy layer. Activation overhead counts every layer's output
    elements plus the duplicated channels materialized on split edges.
    """
    shapes = model.output_shapes()
    w_before = 0.0
    w_after = 0.0
    for layer in model.layers:
        if not is_weighted(layer):
            continue
        elems = float(np.prod(layer.weight.shape))
        c = layer.weight.shape[1]
        n = len(plan.records_for(layer.name))
        w_before += elems
        w_after += elems * (c + n) / c
    a_before = 0.0
    a_after = 0.0
    for shape in shapes:
        elems = float(np.prod(shape))
        a_before += elems
        a_after += elems
    for layer in model.layers:
        if not is_weighted(layer):
            continue
        n = len(plan.records_for(layer.name))
        if n == 0:
            continue
        idx = model.index_of(layer.name)
        edge_shape = shapes[idx - 1] if idx > 0 else model.input_shape
        per_channel = float(np.prod(edge_shape[1:])) if len(edge_shape) > 1 else 1.0
        a_after += n * per_channel
    return (w_after / w_before if w_before else 1.0,
            a_after / a_before if a_before else 1.0)
