"""Symmetric linear quantization on a sign-magnitude grid.

A k-bit grid has 2^k - 1 representable levels: the integers
-(2^(k-1)-1) .. +(2^(k-1)-1) scaled by a step size ``step = clip / (2^(k-1)-1)``,
so the grid endpoints sit exactly at +/-clip. Values beyond the clip threshold
saturate to the endpoints.

Rounding is ``floor(x/step + 1/2)`` in grid units. This exact rounding rule is
load-bearing: the quantization-aware split in :mod:`ocsquant.ocs` preserves
quantized values only under it. Quantization is simulated in real arithmetic
(fake quantization) -- outputs are float tensors snapped to grid points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QuantGrid", "make_grid", "quantize", "quantize_units", "quant_mse"]


@dataclass(frozen=True)
class QuantGrid:
    """A symmetric fixed-point grid: bit width, clip threshold, step size."""

    bits: int
    clip: float
    step: float

    @property
    def max_level(self) -> int:
        """Largest representable grid integer, 2^(bits-1) - 1."""
        return (1 << (self.bits - 1)) - 1


def make_grid(bits: int, clip: float) -> QuantGrid:
    """Construct a grid with ``2^bits - 1`` levels spanning [-clip, clip]."""
    if bits < 2:
        raise ValueError(f"bit width must be >= 2, got {bits}")
    if not clip > 0.0:
        raise ValueError(f"clip threshold must be positive, got {clip}")
    max_level = (1 << (bits - 1)) - 1
    return QuantGrid(bits=int(bits), clip=float(clip), step=float(clip) / max_level)


def quantize_units(x, step: float) -> np.ndarray:
    """Round to grid integers: floor(x/step + 1/2), without saturation.

    This is the raw rounding function; it maps each value to its nearest grid
    integer with exact half-steps going to the upper neighbor.
    """
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    return np.floor(np.asarray(x, dtype=np.float64) / step + 0.5).astype(np.int64)


def quantize(t, g: QuantGrid) -> np.ndarray:
    """Snap every element of ``t`` to the grid, saturating beyond the clip."""
    arr = np.asarray(t, dtype=np.float64)
    lim = g.max_level
    units = np.clip(np.floor(arr / g.step + 0.5), -lim, lim)
    return units * g.step


def quant_mse(t, g: QuantGrid) -> float:
    """Mean squared quantization error of ``t`` on grid ``g``."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty input")
    err = arr - quantize(arr, g)
    return float(np.mean(err * err))
