"""Post-training quantization toolkit.

Symmetric linear (fake) quantization, clip-threshold calibration by MSE sweep,
distribution fitting, or KL divergence, and outlier channel splitting with
quantization-aware split values -- plus a small exact inference engine and a
sweep harness for measuring accuracy/MSE trade-offs on desk-scale fixtures.
"""

from .calibrate import QuantPolicy, calibrate, oracle_activation_ocs, profile_activations
from .clip import (
    ClipResult,
    Histogram,
    aciq_threshold,
    build_histogram,
    fit_distribution,
    kl_threshold,
    mse_threshold,
)
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
from .model_io import load_dataset, load_golden, load_model, save_model, save_report
from .nn import apply_split_plan, forward, relative_sizes
from .ocs import (
    SplitPlan,
    SplitRecord,
    plan_splits,
    select_activation_channels,
    select_weight_channels,
    split_value_naive,
    split_value_qa,
)
from .quant import QuantGrid, make_grid, quant_mse, quantize, quantize_units
from .tensor import as_tensor, max_abs, percentile

__version__ = "0.1.0"

__all__ = [
    "QuantPolicy", "calibrate", "oracle_activation_ocs", "profile_activations",
    "ClipResult", "Histogram", "aciq_threshold", "build_histogram",
    "fit_distribution", "kl_threshold", "mse_threshold",
    "AvgPool", "BatchNorm", "ChannelSplit", "Conv2D", "Flatten",
    "FullyConnected", "MaxPool", "ModelGraph", "ReLU",
    "load_dataset", "load_golden", "load_model", "save_model", "save_report",
    "apply_split_plan", "forward", "relative_sizes",
    "SplitPlan", "SplitRecord", "plan_splits", "select_activation_channels",
    "select_weight_channels", "split_value_naive", "split_value_qa",
    "QuantGrid", "make_grid", "quant_mse", "quantize", "quantize_units",
    "as_tensor", "max_abs", "percentile",
]
