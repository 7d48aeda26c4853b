"""Clip-threshold optimizers for post-training quantization.

Three ways to pick the grid endpoint T for a value distribution:

* ``mse_threshold``  -- sweep evenly spaced candidate thresholds and keep the
  one minimizing the histogram-weighted mean squared quantization error.
* ``aciq_threshold`` -- fit a Gaussian or Laplacian to the distribution and
  minimize the expected quantization error of the fitted density numerically.
* ``kl_threshold``   -- pick the truncation point minimizing the KL divergence
  between the reference histogram and its quantized-and-expanded counterpart.

All three operate on an absolute-value histogram of the tensor being
quantized and return thresholds in (0, max_abs].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr  # standard normal CDF

__all__ = [
    "Histogram",
    "ClipResult",
    "build_histogram",
    "mse_threshold",
    "fit_distribution",
    "aciq_threshold",
    "kl_threshold",
]

DEFAULT_BINS = 2048
DEFAULT_CANDIDATES = 512

# Fraction of total probability mass granted to each zero bin that needs
# smoothing before a KL evaluation. Small enough not to move any argmin.
KL_SMOOTH_EPS = 1e-9


@dataclass(frozen=True)
class Histogram:
    """Equal-width absolute-value histogram over [0, max_abs], top edge inclusive."""

    edges: np.ndarray  # B+1 strictly increasing edges
    counts: np.ndarray  # B non-negative counts
    total: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def max_abs(self) -> float:
        return float(self.edges[-1])

    def validate(self) -> None:
        if self.counts.shape[0] != self.edges.shape[0] - 1:
            raise ValueError("histogram counts/edges length mismatch")
        if not np.all(np.diff(self.edges) > 0):
            raise ValueError("histogram edges must be strictly increasing")
        if not self.total > 0:
            raise ValueError("degenerate distribution")


@dataclass(frozen=True)
class ClipResult:
    """A chosen clip threshold plus the objective value that selected it."""

    threshold: float
    method: str  # one of {"none", "mse", "aciq", "kl"}
    objective: float
    fit: str | None = None  # {"gaussian", "laplacian"} for ACIQ


def build_histogram(t, bins: int = DEFAULT_BINS) -> Histogram:
    """Bin |t| into ``bins`` equal-width bins spanning [0, max_abs(t)]."""
    arr = np.abs(np.asarray(t, dtype=np.float64)).ravel()
    if arr.size == 0:
        raise ValueError("empty input")
    if bins < 16:
        raise ValueError(f"need at least 16 bins, got {bins}")
    top = float(arr.max())
    if top == 0.0:
        raise ValueError("degenerate distribution")
    counts, edges = np.histogram(arr, bins=bins, range=(0.0, top))
    h = Histogram(edges=edges, counts=counts.astype(np.float64), total=float(arr.size))
    h.validate()
    return h


def _mse_at_threshold(h: Histogram, bits: int, threshold: float) -> float:
    """Histogram MSE (1/n) * sum h(x_i) * (x_i - Q_T(x_i))^2 with saturation."""
    lim = (1 << (bits - 1)) - 1
    step = threshold / lim
    x = h.centers
    q = np.minimum(np.floor(x / step + 0.5), lim) * step  # x >= 0: only upper clamp
    err = x - q
    return float(np.sum(h.counts * err * err) / h.counts.shape[0])


def mse_threshold(h: Histogram, bits: int, candidates: int = DEFAULT_CANDIDATES) -> ClipResult:
    """Exhaustive sweep of evenly spaced thresholds in (0, max_abs].

    Evaluates the bin-center MSE (including saturation error beyond each
    candidate) at ``candidates`` thresholds and returns the argmin, breaking
    ties toward the larger threshold.
    """
    h.validate()
    if candidates < 2:
        raise ValueError(f"need at least 2 candidate thresholds, got {candidates}")
    top = h.max_abs
    best_t = None
    best_obj = math.inf
    for j in range(1, candidates + 1):
        t = top * j / candidates
        obj = _mse_at_threshold(h, bits, t)
        if obj <= best_obj:  # <= keeps the larger threshold on ties
            best_obj = obj
            best_t = t
    return ClipResult(threshold=best_t, method="mse", objective=best_obj)


def _bin_mass(h: Histogram, cdf_abs) -> np.ndarray:
    """Per-bin probability mass of a fitted |X| distribution."""
    vals = cdf_abs(h.edges)
    return np.diff(vals)


def fit_distribution(h: Histogram, sigma: float, mean_abs: float) -> tuple[str, float]:
    """Decide whether the profiled distribution looks Gaussian or Laplacian.

    ``sigma`` is the signed sample's standard deviation and ``mean_abs`` its
    mean absolute value; they parameterize Gaussian(0, sigma) and
    Laplacian(0, mean_abs). The winner is the curve whose per-bin integrated
    density is closest (L2) to the normalized histogram; ties go to gaussian.
    """
    h.validate()
    if not sigma > 0 or not mean_abs > 0:
        raise ValueError("degenerate distribution statistics")
    p = h.counts / h.total
    gauss = _bin_mass(h, lambda x: 2.0 * ndtr(x / sigma) - 1.0)
    lap = _bin_mass(h, lambda x: 1.0 - np.exp(-x / mean_abs))
    d_gauss = float(np.sum((gauss - p) ** 2))
    d_lap = float(np.sum((lap - p) ** 2))
    if d_lap < d_gauss:
        return "laplacian", float(mean_abs)
    return "gaussian", float(sigma)


def _expected_quant_error(t: float, bits: int, fit: str, param: float) -> float:
    """Expected squared error of quantizing the fitted density with clip t.

    In-range values contribute the uniform-rounding term step^2/12 weighted by
    the in-range mass; clipped tails contribute E[(|x|-t)^2] over |x| > t.
    Both tail integrals have closed forms.
    """
    lim = (1 << (bits - 1)) - 1
    step = t / lim
    if fit == "gaussian":
        z = t / param
        in_mass = 2.0 * ndtr(z) - 1.0
        phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        tail = param * param * ((1.0 + z * z) * (1.0 - ndtr(z)) - z * phi)
    else:
        in_mass = 1.0 - math.exp(-t / param)
        tail = param * param * math.exp(-t / param)
    return (step * step / 12.0) * in_mass + 2.0 * tail


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, lo: float, hi: float, rel_tol: float = 1e-6) -> float:
    """Minimize a unimodal function on [lo, hi] by golden-section search."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rel_tol * max(abs(a), abs(b), 1e-300):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def aciq_threshold(h: Histogram, bits: int, sigma: float, mean_abs: float) -> ClipResult:
    """Distribution-fit clipping: minimize the fitted density's expected error.

    Fits Gaussian/Laplacian via :func:`fit_distribution`, then minimizes the
    expected quantization error over thresholds in (0, 32*param] with a
    golden-section search (relative tolerance 1e-6). The result is capped at
    the histogram's max_abs.
    """
    fit, param = fit_distribution(h, sigma, mean_abs)
    obj = lambda t: _expected_quant_error(t, bits, fit, param)
    t = _golden_section(obj, 1e-12 * param, 32.0 * param)
    t = min(t, h.max_abs)
    return ClipResult(threshold=float(t), method="aciq", objective=obj(t), fit=fit)


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(P||Q) over bins where P is nonzero; inputs already normalized."""
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _smooth(q: np.ndarray, p: np.ndarray, eps: float) -> np.ndarray:
    """Give zero bins of q that are nonzero in p a mass eps, taken uniformly
    from q's nonzero bins. Inputs are unnormalized; eps is a fraction of the
    total mass."""
    need = (q == 0) & (p > 0)
    n_need = int(need.sum())
    if n_need == 0:
        return q
    total = float(q.sum())
    donors = q > 0
    out = q.copy()
    out[need] = eps * total
    out[donors] -= (eps * total * n_need) / donors.sum()
    return out


def kl_threshold(h: Histogram, bits: int) -> ClipResult:
    """Truncation point minimizing KL(reference || quantized-and-expanded).

    For each candidate bin count i in [2^bits, B]: the reference P keeps the
    first i bins with the tail mass folded into bin i-1; the candidate Q is P
    down-sampled into 2^(bits-1)-1 equal groups and expanded back uniformly
    over each group's nonzero support. Both are normalized (with tiny-mass
    smoothing for any zero bin of Q facing a nonzero bin of P) before the KL
    evaluation. The returned threshold is the upper edge of the winning bin;
    ties break toward the larger threshold.
    """
    h.validate()
    n_bins = h.counts.shape[0]
    min_bins = 1 << bits
    if n_bins < min_bins:
        raise ValueError(f"too few bins: KL at {bits} bits needs >= {min_bins}, got {n_bins}")
    n_groups = (1 << (bits - 1)) - 1
    counts = h.counts
    best_i = None
    best_kl = math.inf
    for i in range(min_bins, n_bins + 1):
        p = counts[:i].copy()
        p[i - 1] += counts[i:].sum()
        nonzero = p > 0

        q = np.zeros(i, dtype=np.float64)
        merged = i // n_groups
        for g in range(n_groups):
            start = g * merged
            stop = i if g == n_groups - 1 else start + merged
            support = nonzero[start:stop]
            norm = int(support.sum())
            if norm:
                q[start:stop][support] = p[start:stop].sum() / norm

        q = _smooth(q, p, KL_SMOOTH_EPS)
        p = p / p.sum()
        q = q / q.sum()
        kl = _kl_divergence(p, q)
        if kl <= best_kl:  # <= keeps the larger threshold on ties
            best_kl = kl
            best_i = i
    return ClipResult(threshold=float(h.edges[best_i]), method="kl", objective=best_kl)
