"""Outlier channel splitting: split-value math, channel selection, planning.

Splitting duplicates a channel and divides its contribution in two, which
leaves the network functionally identical while moving large-magnitude
outliers toward the center of the value distribution. Two split functions
exist for weights:

* naive: (w/2, w/2) -- sums back exactly, but the two halves can round the
  same way, so the quantized halves need not sum to the quantized original.
* quantization-aware: ((w - step/2)/2, (w + step/2)/2) -- nudges the halves to
  opposite sides of a rounding boundary so that Q(a) + Q(b) == Q(w) for every
  w (a consequence of Hermite's floor identity with n=2).

Channel selection is greedy for weights (always split the channel holding the
current largest absolute value, re-evaluating after each simulated halving)
and extreme-value-count based for activations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import graph as g
from .tensor import percentile

__all__ = [
    "SplitRecord",
    "SplitPlan",
    "split_value_naive",
    "split_value_qa",
    "select_weight_channels",
    "select_activation_channels",
    "plan_splits",
    "qa_adjust_weights",
]

SELECTION_PERCENTILE = 0.99
MAX_SPLITS_PER_CHANNEL = 10  # greedy selection refuses more than 10*C splits


@dataclass(frozen=True)
class SplitRecord:
    """One channel duplication: ``source`` was copied into index ``new``.

    ``new`` is always the channel count right after this split minus one
    (duplicates are appended at the end), and ``source`` may itself be a
    previously created duplicate.
    """

    layer: str
    source: int
    new: int


@dataclass(frozen=True)
class SplitPlan:
    """Ordered channel duplications for one model, plus how they were chosen."""

    ratio: float
    target: str  # "weights" or "activations"
    qa: bool
    records: tuple[SplitRecord, ...]

    def layers(self) -> list[str]:
        seen: list[str] = []
        for r in self.records:
            if r.layer not in seen:
                seen.append(r.layer)
        return seen

    def records_for(self, layer_name: str) -> list[SplitRecord]:
        return [r for r in self.records if r.layer == layer_name]

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "target": self.target,
            "qa": self.qa,
            "records": [
                {"layer": r.layer, "source": r.source, "new": r.new} for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(
            ratio=float(d["ratio"]),
            target=str(d["target"]),
            qa=bool(d["qa"]),
            records=tuple(
                SplitRecord(layer=str(r["layer"]), source=int(r["source"]), new=int(r["new"]))
                for r in d["records"]
            ),
        )


def split_value_naive(w: float):
    """Halve a value: (w/2, w/2). The halves always sum back to w exactly."""
    half = w / 2.0
    return half, half


def split_value_qa(w, step: float):
    """Quantization-aware split: ((w - step/2)/2, (w + step/2)/2).

    The second half is computed as ``w - a`` so the pair sums back to w
    exactly in floating point for |w| >= step/4; for smaller values the two
    halves sit at ~step/4 magnitude and the sum carries a rounding error of
    at most one part in 2^52 of the step. In exact arithmetic the pair is
    ((w - step/2)/2, (w + step/2)/2). Quantizing both halves on a grid with
    the given step and summing reproduces the quantized original. Works
    elementwise on arrays.
    """
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    a = (np.asarray(w, dtype=np.float64) - step / 2.0) / 2.0
    b = np.asarray(w, dtype=np.float64) - a
    if np.isscalar(w) or np.ndim(w) == 0:
        return float(a), float(b)
    return a, b


def _channel_slices(weights: np.ndarray) -> list[np.ndarray]:
    """Input-channel slices of a weight tensor (axis 1), as copies."""
    if weights.ndim < 2:
        raise ValueError("weights need an input-channel axis")
    return [weights[:, c].copy() for c in range(weights.shape[1])]


def select_weight_channels(layer_weights: np.ndarray, n_splits: int) -> list[int]:
    """Greedy channel selection for weight splitting.

    Repeatedly picks the input channel whose slice holds the current global
    max-abs value (ties to the lowest index), simulates halving it, and
    appends the halved copy so later iterations can pick a previously created
    channel. Returns the picks in order; pick k is taken from a channel space
    of size C + k.
    """
    if n_splits < 1:
        raise ValueError(f"n_splits must be >= 1, got {n_splits}")
    cols = _channel_slices(np.asarray(layer_weights, dtype=np.float64))
    if n_splits > MAX_SPLITS_PER_CHANNEL * len(cols):
        raise ValueError(
            f"n_splits={n_splits} exceeds practical bound {MAX_SPLITS_PER_CHANNEL}*C")
    picks: list[int] = []
    maxima = [float(np.max(np.abs(c))) if c.size else 0.0 for c in cols]
    for _ in range(n_splits):
        idx = int(np.argmax(maxima))  # argmax takes the first (lowest) index on ties
        picks.append(idx)
        cols[idx] = cols[idx] / 2.0
        maxima[idx] = maxima[idx] / 2.0
        cols.append(cols[idx].copy())
        maxima.append(maxima[idx])
    return picks


def select_activation_channels(
    profile, n_splits: int, pct: float = SELECTION_PERCENTILE
) -> list[int]:
    """Pick the channels with the most extreme profiled activations.

    ``profile`` is a sequence of per-channel sample arrays. The layer-wide
    ``pct`` percentile is computed over all samples; channels are ranked by
    how many of their samples exceed it (descending, ties to the lower
    index) and the top ``n_splits`` are returned.
    """
    if n_splits < 1:
        raise ValueError(f"n_splits must be >= 1, got {n_splits}")
    channels = [np.asarray(c, dtype=np.float64).ravel() for c in profile]
    if not channels or any(c.size == 0 for c in channels):
        raise ValueError("empty profile")
    if n_splits > len(channels):
        raise ValueError(f"cannot split {n_splits} of {len(channels)} channels")
    everything = np.concatenate(channels)
    cut = percentile(everything, pct)
    counts = np.array([int(np.sum(c > cut)) for c in channels])
    order = np.lexsort((np.arange(len(channels)), -counts))
    return [int(i) for i in order[:n_splits]]


def eligible_layers(model: g.ModelGraph, target: str) -> list:
    """Weighted layers whose input edge can be split.

    The first weighted layer is always excluded (it is left unquantized and
    its inputs are the network input). Weight targets additionally require a
    channel-aligned producer upstream: a Flatten over spatial size > 1 (or an
    existing ChannelSplit) in between makes producer expansion impossible.
    """
    first = model.first_weighted().name
    out = []
    for layer in model.weighted_layers():
        if layer.name == first:
            continue
        prod_idx, _, aligned = model.producer_info(layer.name)
        if prod_idx is None:
            continue  # fed by the network input
        if target == "weights" and not aligned:
            continue
        out.append(layer)
    return out


def plan_splits(
    model: g.ModelGraph,
    ratio: float,
    target: str,
    qa: bool = False,
    profiles=None,
) -> SplitPlan:
    """Build a split plan covering every eligible layer of the model.

    Each eligible layer with C input channels receives ceil(ratio * C) splits,
    ordered by the applicable selector. ``profiles`` (a mapping from layer
    name to per-channel sample arrays for the layer's input edge) is required
    for activation targets.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"expand ratio must be in [0, 1], got {ratio}")
    if target not in ("weights", "activations"):
        raise ValueError(f"unknown split target {target!r}")
    if target == "activations" and ratio > 0 and profiles is None:
        raise ValueError("activation splitting requires an activation profile")
    records: list[SplitRecord] = []
    if ratio > 0.0:
        for layer in eligible_layers(model, target):
            c = model.input_channels(layer)
            n = math.ceil(ratio * c)
            if n == 0:
                continue
            if target == "weights":
                picks = select_weight_channels(layer.weight, n)
            else:
                if layer.name not in profiles:
                    raise ValueError(f"no activation profile for layer {layer.name!r}")
                picks = select_activation_channels(profiles[layer.name], n)
            for k, src in enumerate(picks):
                records.append(SplitRecord(layer=layer.name, source=src, new=c + k))
    return SplitPlan(ratio=float(ratio), target=target, qa=bool(qa), records=tuple(records))


def qa_adjust_weights(split_weight: np.ndarray, records, step: float) -> np.ndarray:
    """Re-derive a layer's split columns with the quantization-aware values.

    ``split_weight`` is the consumer weight after naive splitting (duplicates
    appended along axis 1 in record order). The original columns are
    reconstructed by merging each pair back (exact, since naive halves sum
    exactly), then the recorded splits are replayed with the QA split
    function. Replaying the lineage keeps the preservation identity intact
    even when a previously created half is split again; for single splits it
    reduces to shifting the halves by -step/4 and +step/4.
    """
    records = list(records)
    w = np.asarray(split_weight, dtype=np.float64)
    base_channels = w.shape[1] - len(records)
    merged = w.copy()
    for r in reversed(records):
        merged[:, r.source] = merged[:, r.source] + merged[:, r.new]
    cols = [merged[:, c].copy() for c in range(base_channels)]
    for r in records:
        a, b = split_value_qa(cols[r.source], step)
        cols[r.source] = a
        cols.append(b)
    return np.stack(cols, axis=1)
