"""Quantization policy resolution: profiling, clip calibration, oracle OCS.

The flow fixed here is: apply channel splits first, compute clip thresholds on
the split tensors, build the grids, then apply the quantization-aware
adjustment to the split weight pairs. Activation grids come from histograms
profiled by running sample inputs through the (already transformed) float
model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import clip as clip_mod
from .graph import ChannelSplit, ModelGraph, ReLU, is_weighted
from .nn import _apply_layer, apply_split_plan, forward
from .ocs import SplitPlan, plan_splits, qa_adjust_weights
from .quant import QuantGrid, make_grid
from .tensor import max_abs

__all__ = [
    "QuantPolicy",
    "SiteProfile",
    "act_quant_sites",
    "input_site",
    "profile_activations",
    "calibrate",
    "oracle_activation_ocs",
]

CLIP_METHODS = ("none", "mse", "aciq", "kl")


@dataclass
class QuantPolicy:
    """What to quantize and how; grids are filled in by :func:`calibrate`."""

    weight_bits: int = 8
    act_bits: int | None = 8  # None: leave activations in float
    clip_weights: str = "none"
    clip_acts: str = "none"
    skip: tuple[str, ...] | None = None  # None resolves to the first weighted layer
    hist_bins: int = clip_mod.DEFAULT_BINS
    mse_candidates: int = clip_mod.DEFAULT_CANDIDATES
    weight_grids: dict[str, QuantGrid] = field(default_factory=dict)
    act_grids: dict[str, QuantGrid] = field(default_factory=dict)

    def validate(self) -> None:
        if not 2 <= self.weight_bits <= 16:
            raise ValueError(f"weight bits must be in [2, 16], got {self.weight_bits}")
        if self.act_bits is not None and not 2 <= self.act_bits <= 16:
            raise ValueError(f"activation bits must be in [2, 16], got {self.act_bits}")
        for m in (self.clip_weights, self.clip_acts):
            if m not in CLIP_METHODS:
                raise ValueError(f"unknown clip method {m!r}")

    def resolved_skip(self, model: ModelGraph) -> tuple[str, ...]:
        if self.skip is not None:
            return self.skip
        return (model.first_weighted().name,)


@dataclass
class SiteProfile:
    """Everything recorded at one activation-quantization site."""

    channel_values: list[np.ndarray]  # per-channel flat sample arrays

    @property
    def values(self) -> np.ndarray:
        return np.concatenate(self.channel_values)

    @property
    def count(self) -> int:
        return sum(c.size for c in self.channel_values)

    def stats(self) -> tuple[float, float]:
        """(standard deviation, mean absolute value) of the recorded samples."""
        v = self.values
        return float(np.std(v)), float(np.mean(np.abs(v)))


def act_quant_sites(model: ModelGraph) -> list[str]:
    """Layer names whose outputs are quantized under an activation policy.

    Sites sit after every ReLU and after every weighted layer with no ReLU
    before the next weighted layer (or the network output). A ChannelSplit
    feeding a weighted layer takes over its edge's site, so split copies are
    scaled before quantization.
    """
    layers = model.layers
    sites: list[str] = []
    for i, layer in enumerate(layers):
        if isinstance(layer, ReLU):
            sites.append(layer.name)
        elif is_weighted(layer):
            nxt = next((l for l in layers[i + 1 :] if is_weighted(l) or isinstance(l, ReLU)), None)
            if not isinstance(nxt, ReLU):
                sites.append(layer.name)
    for i, layer in enumerate(layers):
        if isinstance(layer, ChannelSplit) and i + 1 < len(layers) and is_weighted(layers[i + 1]):
            prev_w = max((j for j in range(i) if is_weighted(layers[j])), default=0)
            edge = {layers[j].name for j in range(prev_w, i)}
            sites = [s for s in sites if s not in edge]
            sites.append(layer.name)
    order = {l.name: i for i, l in enumerate(layers)}
    return sorted(set(sites), key=order.__getitem__)


def input_site(model: ModelGraph, consumer_name: str) -> str | None:
    """The activation site on the edge feeding ``consumer_name`` (None at the input)."""
    sites = set(act_quant_sites(model))
    idx = model.index_of(consumer_name)
    for j in range(idx - 1, -1, -1):
        layer = model.layers[j]
        if layer.name in sites:
            return layer.name
        if is_weighted(layer):
            break
    return None


def profile_activations(model: ModelGraph, samples) -> dict[str, SiteProfile]:
    """Run float forwards over ``samples`` and record per-site distributions.

    Returns a mapping from site layer name to a :class:`SiteProfile` holding
    every observed value, organized per channel (feature, for flat tensors).
    """
    batch = np.asarray(samples, dtype=np.float64)
    if batch.ndim == len(model.input_shape):
        batch = batch[None]
    if batch.shape[0] < 1:
        raise ValueError("need at least one profiling sample")
    sites = act_quant_sites(model)
    wanted = set(sites)
    recorded: dict[str, list[np.ndarray]] = {s: [] for s in sites}
    h = batch
    for layer in model.layers:
        h = _apply_layer(layer, h)
        if layer.name in wanted:
            recorded[layer.name].append(h)
    profiles: dict[str, SiteProfile] = {}
    for name, chunks in recorded.items():
        stacked = np.concatenate(chunks, axis=0)
        channels = [stacked[:, c].ravel().copy() for c in range(stacked.shape[1])]
        profiles[name] = SiteProfile(channel_values=channels)
    return profiles


def edge_profiles(model: ModelGraph, profiles: dict[str, SiteProfile]) -> dict[str, list[np.ndarray]]:
    """Per-consumer-layer channel sample sets, for activation channel selection."""
    out: dict[str, list[np.ndarray]] = {}
    for layer in model.weighted_layers():
        site = input_site(model, layer.name)
        if site is not None and site in profiles:
            out[layer.name] = profiles[site].channel_values
    return out


def _threshold_for(values: np.ndarray, method: str, bits: int, policy: QuantPolicy) -> float:
    if method == "none":
        top = max_abs(values)
        if top == 0.0:
            raise ValueError("degenerate distribution: all profiled values are zero")
        return top
    hist = clip_mod.build_histogram(values, policy.hist_bins)
    if method == "mse":
        return clip_mod.mse_threshold(hist, bits, policy.mse_candidates).threshold
    if method == "aciq":
        sigma = float(np.std(values))
        mean_abs = float(np.mean(np.abs(values)))
        return clip_mod.aciq_threshold(hist, bits, sigma, mean_abs).threshold
    if method == "kl":
        return clip_mod.kl_threshold(hist, bits).threshold
    raise ValueError(f"unknown clip method {method!r}")


def calibrate(
    model: ModelGraph,
    policy: QuantPolicy,
    profiles: dict[str, SiteProfile] | None = None,
    plan: SplitPlan | None = None,
) -> tuple[ModelGraph, QuantPolicy]:
    """Resolve every quantization grid; returns (model, resolved policy).

    ``model`` is the (possibly split) graph and ``profiles`` its activation
    profile. When the plan is a quantization-aware weight plan, the recorded
    split pairs are re-derived with the QA split values once the grid step is
    known, so the returned graph's weights differ from the input's on split
    columns (their sums, and hence float outputs, do not).
    """
    policy.validate()
    out = model.copy()
    skip = policy.resolved_skip(out)
    weight_grids: dict[str, QuantGrid] = {}
    for layer in out.weighted_layers():
        if layer.name in skip:
            continue
        records = plan.records_for(layer.name) if plan is not None else []
        threshold = _threshold_for(layer.weight, policy.clip_weights, policy.weight_bits, policy)
        grid = make_grid(policy.weight_bits, threshold)
        if plan is not None and plan.qa and plan.target == "weights" and records:
            adjusted = qa_adjust_weights(layer.weight, records, grid.step)
            if policy.clip_weights == "none":
                # the +/- step/4 nudges can move the extreme value; re-derive once
                new_max = max_abs(adjusted)
                if new_max != threshold:
                    grid = make_grid(policy.weight_bits, new_max)
                    adjusted = qa_adjust_weights(layer.weight, records, grid.step)
            layer.weight = adjusted
        weight_grids[layer.name] = grid
    act_grids: dict[str, QuantGrid] = {}
    if policy.act_bits is not None:
        if profiles is None:
            raise ValueError("activation quantization requires an activation profile")
        for site in act_quant_sites(out):
            if site not in profiles:
                raise ValueError(f"no profile recorded for activation site {site!r}")
            values = profiles[site].values
            threshold = _threshold_for(values, policy.clip_acts, policy.act_bits, policy)
            act_grids[site] = make_grid(policy.act_bits, threshold)
    resolved = replace(policy, skip=skip, weight_grids=weight_grids, act_grids=act_grids)
    return out, resolved


def oracle_activation_ocs(
    model: ModelGraph,
    policy: QuantPolicy,
    input_batch,
    ratio: float,
    qa: bool = False,
) -> np.ndarray:
    """Activation splitting with exact knowledge of the batch's activations.

    For each call: run a float forward to observe the true activations,
    re-select split channels from this batch alone, apply the batch-local
    split plan, re-resolve the grids on the batch, and run the quantized
    forward. The input model is never mutated.
    """
    batch = np.asarray(input_batch, dtype=np.float64)
    if batch.ndim == len(model.input_shape):
        batch = batch[None]
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    observed = profile_activations(model, batch)
    plan = plan_splits(model, ratio, "activations", qa, edge_profiles(model, observed))
    split_model = apply_split_plan(model, plan)
    split_profiles = profile_activations(split_model, batch)
    final_model, resolved = calibrate(split_model, policy, split_profiles, plan)
    return forward(final_model, batch, resolved)
