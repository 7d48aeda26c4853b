"""Experiment harness: single quantization runs and sweeps over settings.

A run loads a model and dataset, optionally profiles activations and applies
an outlier-channel-splitting plan, calibrates every grid, evaluates top-1
accuracy (and output MSE against the float model) on the evaluation split,
and produces report rows. Runs are fully deterministic for a given
configuration: profiling uses the leading profile-split samples and all
selectors and argmin reductions have fixed tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibrate import (
    QuantPolicy,
    calibrate,
    edge_profiles,
    oracle_activation_ocs,
    profile_activations,
)
from .graph import ModelGraph
from .model_io import Dataset, load_dataset, load_model, save_model, save_report, save_split_plan
from .nn import apply_split_plan, forward, relative_sizes
from .ocs import SplitPlan, plan_splits

__all__ = ["RunConfig", "ReportRow", "RunResult", "run_quantize", "run_sweep", "evaluate_outputs"]

OCS_TARGETS = ("none", "weights", "acts")


@dataclass
class RunConfig:
    """One quantization experiment, as configured on the command line."""

    model: Path
    data: Path
    wbits: int = 8
    abits: int = 8
    clip_w: str = "none"
    clip_a: str = "none"
    ocs_target: str = "none"
    ocs_ratio: float = 0.0
    qa: bool = True
    profile_samples: int = 512
    oracle: bool = False
    oracle_batch: int = 1
    out: Path | None = None
    seed: int = 0
    save_model_path: Path | None = None
    save_plan_path: Path | None = None

    def validate(self) -> None:
        for bits, label in ((self.wbits, "wbits"), (self.abits, "abits")):
            if not 2 <= bits <= 16:
                raise ValueError(f"{label} must be in [2, 16], got {bits}")
        if not 0.0 <= self.ocs_ratio <= 1.0:
            raise ValueError(f"ocs-ratio must be in [0, 1], got {self.ocs_ratio}")
        if self.profile_samples < 1:
            raise ValueError(f"profile-samples must be >= 1, got {self.profile_samples}")
        if self.ocs_target not in OCS_TARGETS:
            raise ValueError(f"ocs-target must be one of {OCS_TARGETS}, got {self.ocs_target!r}")
        if self.oracle and self.ocs_target != "acts":
            raise ValueError("--oracle requires --ocs-target acts")
        if self.oracle_batch < 1:
            raise ValueError(f"oracle-batch must be >= 1, got {self.oracle_batch}")


@dataclass(frozen=True)
class ReportRow:
    model: str
    target: str
    bits: int
    clip_method: str
    ocs_ratio: float
    qa: bool
    accuracy_or_mse: float
    rel_weight_size: float
    rel_act_size: float


@dataclass
class RunResult:
    row: ReportRow
    accuracy: float | None  # percent, None for label-free data
    output_mse: float
    plan: SplitPlan
    policy: QuantPolicy
    model: ModelGraph
    float_accuracy: float | None = None


def evaluate_outputs(outputs: np.ndarray, labels: np.ndarray | None,
                     float_outputs: np.ndarray) -> tuple[float | None, float]:
    """(top-1 accuracy in percent or None, mean squared error vs float outputs)."""
    mse = float(np.mean((outputs - float_outputs) ** 2))
    if labels is None:
        return None, mse
    predictions = np.argmax(outputs, axis=1)
    return float(np.mean(predictions == labels) * 100.0), mse


def _policy_from_config(cfg: RunConfig) -> QuantPolicy:
    return QuantPolicy(
        weight_bits=cfg.wbits,
        act_bits=cfg.abits,
        clip_weights=cfg.clip_w,
        clip_acts=cfg.clip_a,
    )


def run_pipeline(model: ModelGraph, dataset: Dataset, cfg: RunConfig,
                 model_name: str) -> RunResult:
    """The full deterministic pipeline for one configuration."""
    cfg.validate()
    policy = _policy_from_config(cfg)
    prof_inputs = dataset.profile_inputs[: cfg.profile_samples]
    if prof_inputs.shape[0] == 0:
        raise ValueError("dataset has no profile-split samples")
    target = {"weights": "weights", "acts": "activations"}.get(cfg.ocs_target)

    profiles = profile_activations(model, prof_inputs)
    if target is not None and cfg.ocs_ratio > 0.0:
        plan = plan_splits(model, cfg.ocs_ratio, target, cfg.qa,
                           edge_profiles(model, profiles))
    else:
        plan = SplitPlan(ratio=cfg.ocs_ratio, target=target or "weights",
                         qa=cfg.qa, records=())
    split_model = apply_split_plan(model, plan)
    if plan.records:
        profiles = profile_activations(split_model, prof_inputs)
    final_model, resolved = calibrate(split_model, policy, profiles, plan)

    eval_inputs = dataset.eval_inputs
    eval_labels = dataset.eval_labels
    if eval_inputs.shape[0] == 0:
        raise ValueError("dataset has no eval-split samples")
    float_outputs = forward(model, eval_inputs)
    if cfg.oracle:
        chunks = [
            oracle_activation_ocs(model, policy, eval_inputs[i : i + cfg.oracle_batch],
                                  cfg.ocs_ratio, cfg.qa)
            for i in range(0, eval_inputs.shape[0], cfg.oracle_batch)
        ]
        outputs = np.concatenate(chunks, axis=0)
    else:
        outputs = forward(final_model, eval_inputs, resolved)
    accuracy, mse = evaluate_outputs(outputs, eval_labels, float_outputs)
    rel_w, rel_a = relative_sizes(model, plan)
    row = ReportRow(
        model=model_name,
        target=cfg.ocs_target,
        bits=cfg.wbits,
        clip_method=cfg.clip_w,
        ocs_ratio=cfg.ocs_ratio,
        qa=cfg.qa,
        accuracy_or_mse=accuracy if accuracy is not None else mse,
        rel_weight_size=rel_w,
        rel_act_size=rel_a,
    )
    return RunResult(row=row, accuracy=accuracy, output_mse=mse, plan=plan,
                     policy=resolved, model=final_model,
                     float_accuracy=dataset.metadata.get("float_accuracy"))


def run_quantize(cfg: RunConfig) -> RunResult:
    """Load, quantize, evaluate; write the report and optional artifacts."""
    cfg.validate()
    model = load_model(cfg.model)
    dataset = load_dataset(cfg.data)
    result = run_pipeline(model, dataset, cfg, Path(cfg.model).stem)
    if cfg.out is not None:
        save_report([result.row], cfg.out)
    if cfg.save_model_path is not None:
        save_model(result.model, cfg.save_model_path)
    if cfg.save_plan_path is not None:
        save_split_plan(result.plan, cfg.save_plan_path)
    return result


def run_sweep(cfg: RunConfig, bits_list, clip_methods, ratios) -> list[ReportRow]:
    """Cartesian sweep plus per-bitwidth "OCS + best clip" rows.

    Base rows cover bits x clip x ratio in the requested order. The best clip
    method per bitwidth is the one with the highest accuracy at ratio 0; for
    every nonzero ratio a combined run with that method is appended, tagged
    ``best:<method>`` in the clip_method column.
    """
    bits_list = list(bits_list)
    clip_methods = list(clip_methods)
    ratios = list(ratios)
    if not bits_list or not clip_methods or not ratios:
        raise ValueError("sweep over an empty range")
    cfg.validate()
    model = load_model(cfg.model)
    dataset = load_dataset(cfg.data)
    name = Path(cfg.model).stem

    rows: list[ReportRow] = []
    base_accuracy: dict[tuple[int, str], float] = {}
    for bits in bits_list:
        for method in clip_methods:
            for ratio in ratios:
                target = cfg.ocs_target if ratio > 0 else "none"
                sub = replace(cfg, wbits=bits, clip_w=method, ocs_ratio=ratio,
                              ocs_target=target, out=None,
                              save_model_path=None, save_plan_path=None)
                result = run_pipeline(model, dataset, sub, name)
                rows.append(result.row)
                if ratio == 0:
                    base_accuracy[(bits, method)] = result.row.accuracy_or_mse
    nonzero = [r for r in ratios if r > 0]
    if base_accuracy and nonzero:
        for bits in bits_list:
            scored = [(base_accuracy[(bits, m)], m) for m in clip_methods
                      if (bits, m) in base_accuracy]
            best = max(scored, key=lambda t: (t[0], -clip_methods.index(t[1])))[1]
            for ratio in nonzero:
                sub = replace(cfg, wbits=bits, clip_w=best, ocs_ratio=ratio,
                              ocs_target=cfg.ocs_target, out=None,
                              save_model_path=None, save_plan_path=None)
                result = run_pipeline(model, dataset, sub, name)
                rows.append(replace(result.row, clip_method=f"best:{best}"))
    if cfg.out is not None:
        save_report(rows, cfg.out)
    return rows


def profile_report(model_path, data_path, samples: int) -> dict:
    """Per-site activation statistics for the `profile` subcommand."""
    model = load_model(model_path)
    dataset = load_dataset(data_path)
    prof_inputs = dataset.profile_inputs[:samples]
    if prof_inputs.shape[0] == 0:
        raise ValueError("dataset has no profile-split samples")
    profiles = profile_activations(model, prof_inputs)
    out = {}
    for site, prof in profiles.items():
        values = prof.values
        out[site] = {
            "count": int(values.size),
            "channels": len(prof.channel_values),
            "max_abs": float(np.max(np.abs(values))),
            "mean_abs": float(np.mean(np.abs(values))),
            "std": float(np.std(values)),
        }
    return out


def _fmt_shape(shape) -> str:
    return "x".join(str(s) for s in shape)


def describe_model(path) -> str:
    """Human-readable model summary for the `inspect` subcommand."""
    model = load_model(path)
    shapes = model.output_shapes()
    lines = [f"input: {_fmt_shape(model.input_shape)}"]
    total = 0
    for layer, shape in zip(model.layers, shapes):
        params = ""
        if hasattr(layer, "weight"):
            n = int(np.prod(layer.weight.shape)) + int(np.prod(layer.bias.shape))
            total += n
            params = f"  params={n}"
        lines.append(f"{layer.name:>16s}  {type(layer).__name__:<14s} -> "
                     f"{_fmt_shape(shape)}{params}")
    lines.append(f"total parameters: {total}")
    return "\n".join(lines)


def describe_container(path) -> str:
    """Summary of a non-model container (dataset or golden file)."""
    from .model_io import load_container

    header, tensors = load_container(path)
    lines = [f"kind: {header.get('kind', 'unknown')}"]
    for name in sorted(tensors):
        lines.append(f"{name:>16s}  {_fmt_shape(tensors[name].shape)}")
    meta = header.get("metadata")
    if meta:
        lines.append(f"metadata: {meta}")
    return "\n".join(lines)
