"""Dense float64 tensors and the elementary statistics the toolkit is built on.

A tensor here is simply a C-contiguous ``numpy.ndarray`` of float64 values.
Model files store 32-bit floats; everything is widened to 64-bit on load so
that results do not depend on accumulation order at test tolerances.
Tensors are treated as immutable: operations return new arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = ["as_tensor", "max_abs", "percentile"]


def as_tensor(values, shape=None) -> np.ndarray:
    """Build a float64 tensor, validating shape consistency and finiteness.

    ``values`` may be any array-like. If ``shape`` is given, the flat data is
    reshaped to it (row-major) and the element count must match.
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ValueError(f"non-positive dimension in shape {shape}")
        if arr.size != int(np.prod(shape)):
            raise ValueError(
                f"shape {shape} needs {int(np.prod(shape))} elements, got {arr.size}"
            )
        arr = arr.reshape(shape)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("tensor contains NaN or Inf")
    return arr


def max_abs(t) -> float:
    """Largest absolute value in ``t``. Zero only if every element is zero."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty input")
    return float(np.max(np.abs(arr)))


def percentile(t, p: float) -> float:
    """Value below which a fraction ``p`` of the elements fall.

    Uses linear interpolation between order statistics, so ``p=0`` is the
    minimum, ``p=1`` the maximum, and intermediate values interpolate.
    """
    arr = np.asarray(t, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty input")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"percentile fraction must be in [0, 1], got {p}")
    return float(np.percentile(arr, p * 100.0, method="linear"))
