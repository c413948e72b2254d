"""Local/global error measures, summary estimators and the privacy/utility scores."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "ENTROPY_BIN_WIDTH",
    "ErrorSample",
    "ErrorStats",
    "NormalizationConstants",
    "ObjectiveWeights",
    "error_stats",
    "global_errors",
    "iqr",
    "local_errors",
    "noise_autocorrelation",
    "percentile",
    "privacy_score",
    "shannon_entropy",
    "utility_score",
]

ENTROPY_BIN_WIDTH = 0.001


class ErrorSample(NamedTuple):
    """Emitted relative errors plus the number of cells/periods that were skipped."""

    errors: np.ndarray
    excluded: int


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    std: float
    entropy: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ValueError(f"non-finite error statistics {self}")
        if self.mean < 0 or self.std < 0 or self.entropy < 0:
            raise ValueError(f"error statistics must be non-negative: {self}")


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights for the privacy (alpha) and utility (gamma) scores; each triple sums to 1."""

    alpha: tuple[float, float, float] = (0.2, 0.4, 0.4)
    gamma: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        for name in ("alpha", "gamma"):
            w = tuple(float(x) for x in getattr(self, name))
            if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be three non-negative weights summing to 1, got {w}")
            object.__setattr__(self, name, w)


@dataclass(frozen=True)
class NormalizationConstants:
    max_mean_L: float
    max_std_L: float
    max_entropy_L: float
    max_mean_E: float
    max_std_E: float
    max_entropy_E: float

    def __post_init__(self):
        for name, value in zip(self.field_names(), astuple(self)):
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"normalization constant {name} must be positive, got {value}")

    @staticmethod
    def field_names() -> tuple[str, ...]:
        return ("max_mean_L", "max_std_L", "max_entropy_L", "max_mean_E", "max_std_E", "max_entropy_E")

    @classmethod
    def from_stats(cls, local: list[ErrorStats], global_: list[ErrorStats]) -> NormalizationConstants:
        """Maxima over the given stats; a maximum of 0 is replaced by 1 so its component scores 0."""

        def top(values):
            m = max(values, default=0.0)
            return m if m > 0 else 1.0

        return cls(
            top(s.mean for s in local),
            top(s.std for s in local),
            top(s.entropy for s in local),
            top(s.mean for s in global_),
            top(s.std for s in global_),
            top(s.entropy for s in global_),
        )


def local_errors(original, masked, missing=None) -> ErrorSample:
    """Per-cell ``|masked - original| / |original|``; zero or missing originals are skipped.

    Only zero originals count as exclusions; missing cells are not readings.
    """
    original = np.asarray(original, dtype=np.float64)
    masked = np.asarray(masked, dtype=np.float64)
    if original.shape != masked.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {masked.shape}")
    present = np.ones(original.shape, bool) if missing is None else ~np.asarray(missing, bool)
    usable = present & (original != 0.0)
    errs = np.abs(masked[usable] - original[usable]) / np.abs(original[usable])
    return ErrorSample(errs, int(np.count_nonzero(present)) - errs.size)


def period_sums(values, missing, slots_per_period: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if missing is not None:
        values = np.where(missing, 0.0, values)
    n_periods = values.shape[-1] // slots_per_period
    values = values[..., : n_periods * slots_per_period]
    shaped = values.reshape(-1, n_periods, slots_per_period)
    return shaped.sum(axis=2).sum(axis=0)


def global_errors(original, masked, missing=None, slots_per_period: int = 48) -> ErrorSample:
    """Relative error of the per-period sum of masked readings vs. true readings.

    Periods whose true sum is zero (including fully missing periods) are skipped.
    """
    original = np.asarray(original, dtype=np.float64)
    masked = np.asarray(masked, dtype=np.float64)
    if original.shape != masked.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {masked.shape}")
    true = period_sums(original, missing, slots_per_period)
    noisy = period_sums(masked, missing, slots_per_period)
    ok = true != 0.0
    errs = np.abs(noisy[ok] - true[ok]) / np.abs(true[ok])
    return ErrorSample(errs, int(true.size - errs.size))


def shannon_entropy(sample, bin_width: float = ENTROPY_BIN_WIDTH) -> float:
    """Histogram entropy in nats with bins ``[k w, (k+1) w)`` anchored at 0."""
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("entropy of an empty sample")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    keys = np.floor(x / bin_width).astype(np.int64)
    lo = keys.min()
    if lo < 0:
        raise ValueError("entropy histogram expects non-negative values")
    # bincount and unique give the same non-empty counts in the same order
    if keys.max() <= 4 * x.size + (1 << 20):
        counts = np.bincount(keys)
        counts = counts[counts > 0]
    else:
        counts = np.unique(keys, return_counts=True)[1]
    p = counts / x.size
    return float(-np.sum(p * np.log(p)))


def error_stats(errors, bin_width: float = ENTROPY_BIN_WIDTH) -> ErrorStats:
    """Mean, population standard deviation and histogram entropy; all 0 for an empty sample."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return ErrorStats(0.0, 0.0, 0.0)
    return ErrorStats(float(errors.mean()), float(errors.std()), shannon_entropy(errors, bin_width))


def percentile(sample, q: float) -> float:
    """Linear interpolation between closest ranks; rank ``q/100 * (n-1)``, zero based."""
    s = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 <= q <= 100:
        raise ValueError(f"q must be within [0, 100], got {q}")
    rank = q / 100 * (len(s) - 1)
    lo = math.floor(rank)
    frac = rank - lo
    if frac == 0 or lo + 1 >= len(s):
        return float(s[lo])
    return float(s[lo] + frac * (s[lo + 1] - s[lo]))


def iqr(sample) -> float:
    return percentile(sample, 75) - percentile(sample, 25)


def _ratio(value: float, top: float) -> float:
    return min(value / top, 1.0)


def privacy_score(stats: ErrorStats, w: ObjectiveWeights, norm: NormalizationConstants) -> float:
    a1, a2, a3 = w.alpha
    score = (
        a1 * _ratio(stats.mean, norm.max_mean_L)
        + a2 * _ratio(stats.std, norm.max_std_L)
        + a3 * _ratio(stats.entropy, norm.max_entropy_L)
    )
    return min(max(score, 0.0), 1.0)


def utility_score(stats: ErrorStats, w: ObjectiveWeights, norm: NormalizationConstants) -> float:
    g1, g2, g3 = w.gamma
    loss = (
        g1 * _ratio(stats.mean, norm.max_mean_E)
        + g2 * _ratio(stats.std, norm.max_std_E)
        + g3 * _ratio(stats.entropy, norm.max_entropy_E)
    )
    return min(max(1.0 - loss, 0.0), 1.0)


def noise_autocorrelation(noise_series, max_lag: int) -> np.ndarray:
    """Pearson correlation between the series and its lag-k shift, k = 1..max_lag.

    Raises ValueError when a lagged window is constant (correlation undefined).
    """
    x = np.asarray(noise_series, dtype=np.float64).ravel()
    if not 1 <= max_lag < x.size:
        raise ValueError(f"need 1 <= max_lag < len(series), got max_lag={max_lag}, n={x.size}")
    out = np.empty(max_lag)
    for k in range(1, max_lag + 1):
        a, b = x[:-k] - x[:-k].mean(), x[k:] - x[k:].mean()
        denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
        if denom == 0.0:
            raise ValueError(f"autocorrelation undefined at lag {k}: constant series")
        out[k - 1] = np.clip(np.dot(a, b) / denom, -1.0, 1.0)
    return out
