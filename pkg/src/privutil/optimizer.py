"""Bin-based selection of optimal privacy settings.

Settings that pass the hard constraint on global error are scored, binned by
their median privacy, filtered by privacy dispersion, and the one with the
best ``median + 10th percentile`` utility wins each bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Mechanism
from .metrics import NormalizationConstants, percentile
from .sweep import EvaluationRecord, TradeoffSample

__all__ = [
    "BinResult",
    "BinSpec",
    "ConstraintOutcome",
    "HardConstraint",
    "apply_hard_constraint",
    "bin_index",
    "bin_settings",
    "dispersion_filter",
    "export_trajectory",
    "n_bins",
    "select_per_bin",
    "utility_objective",
]


@dataclass(frozen=True)
class BinSpec:
    bin_width: float = 0.2
    omega: float = 0.1

    def __post_init__(self):
        if not 0 < self.bin_width <= 1:
            raise ValueError(f"bin_width must lie in (0, 1], got {self.bin_width}")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.omega > self.bin_width:
            raise ValueError(f"omega ({self.omega}) must not exceed bin_width ({self.bin_width})")


@dataclass(frozen=True)
class HardConstraint:
    max_mean_E: float = 0.1
    max_std_E: float = 0.1
    per_record: bool = True

    def __post_init__(self):
        if self.max_mean_E <= 0 or self.max_std_E <= 0:
            raise ValueError("hard-constraint thresholds must be positive")

    def admits(self, mean_e: float, std_e: float) -> bool:
        return mean_e < self.max_mean_E and std_e < self.max_std_E


@dataclass(frozen=True)
class ConstraintOutcome:
    survivors: tuple[str, ...]
    norm: NormalizationConstants | None
    records: tuple[EvaluationRecord, ...]


def apply_hard_constraint(records: Iterable[EvaluationRecord], hc: HardConstraint = HardConstraint()) -> ConstraintOutcome:
    """Keep settings whose global error passes the thresholds.

    With ``per_record`` every record must pass; otherwise the setting's mean of
    record-level mean_E and std_E is tested. Normalization maxima come from the
    surviving records only; ``norm`` is None when nothing survives.
    """
    grouped: dict[str, list[EvaluationRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.setting_id, []).append(rec)
    survivors = []
    for sid, recs in grouped.items():
        if hc.per_record:
            ok = all(hc.admits(r.global_stats.mean, r.global_stats.std) for r in recs)
        else:
            ok = hc.admits(
                float(np.mean([r.global_stats.mean for r in recs])),
                float(np.mean([r.global_stats.std for r in recs])),
            )
        if ok:
            survivors.append(sid)
    kept = tuple(r for sid in survivors for r in grouped[sid])
    if not kept:
        return ConstraintOutcome((), None, ())
    norm = NormalizationConstants.from_stats([r.local_stats for r in kept], [r.global_stats for r in kept])
    return ConstraintOutcome(tuple(survivors), norm, kept)


def n_bins(bin_width: float) -> int:
    return max(1, math.ceil(round(1.0 / bin_width, 9)))


def bin_index(privacy: float, bin_width: float) -> int:
    """Half-open bins ``[k w, (k+1) w)``; the last bin is closed at 1."""
    k = math.floor(round(privacy / bin_width, 9))
    return min(max(k, 0), n_bins(bin_width) - 1)


def bin_settings(tradeoffs: dict[str, TradeoffSample], spec: BinSpec) -> dict[int, list[str]]:
    binned: dict[int, list[str]] = {k: [] for k in range(n_bins(spec.bin_width))}
    for sid, sample in tradeoffs.items():
        binned[bin_index(percentile(sample.privacy_values, 50), spec.bin_width)].append(sid)
    return binned


def dispersion_filter(sample: TradeoffSample, omega: float) -> bool:
    q = sample.privacy_values
    return percentile(q, 50) - percentile(q, 10) < omega


def utility_objective(sample: TradeoffSample) -> float:
    return percentile(sample.utility_values, 50) + percentile(sample.utility_values, 10)


@dataclass(frozen=True)
class BinResult:
    bin_index: int
    bin_range: tuple[float, float]
    winner: str | None
    objective_value: float | None
    median_privacy: float | None
    median_utility: float | None
    mechanism: Mechanism | None = None
    params: tuple[float, ...] = ()

    def to_row(self) -> dict:
        return {
            "bin_index": self.bin_index,
            "lo": self.bin_range[0],
            "hi": self.bin_range[1],
            "setting_id": self.winner,
            "mechanism": None if self.mechanism is None else self.mechanism.value,
            "params": " ".join(format(p, ".17g") for p in self.params),
            "objective": self.objective_value,
            "median_privacy": self.median_privacy,
            "median_utility": self.median_utility,
        }

    @classmethod
    def from_row(cls, row: dict) -> BinResult:
        mech = row["mechanism"]
        return cls(
            row["bin_index"], (row["lo"], row["hi"]), row["setting_id"], row["objective"],
            row["median_privacy"], row["median_utility"],
            None if mech is None else Mechanism(mech),
            tuple(float(p) for p in row["params"].split()),
        )


def select_per_bin(
    binned: dict[int, list[str]],
    tradeoffs: dict[str, TradeoffSample],
    omega: float,
    bin_width: float | None = None,
) -> list[BinResult]:
    """Per bin, the dispersion-passing setting maximizing the utility objective.

    Ties go to the higher utility median, then to the smaller setting id.
    ``bin_width`` only labels the ranges; it defaults to ``1 / len(binned)``.
    """
    width = bin_width if bin_width is not None else 1.0 / max(len(binned), 1)
    results = []
    for k in sorted(binned):
        lo, hi = k * width, min((k + 1) * width, 1.0)
        best = None
        for sid in binned[k]:
            sample = tradeoffs[sid]
            if not dispersion_filter(sample, omega):
                continue
            key = (utility_objective(sample), percentile(sample.utility_values, 50))
            if best is None or key > best[0] or (key == best[0] and sid < best[1]):
                best = (key, sid)
        if best is None:
            results.append(BinResult(k, (lo, hi), None, None, None, None))
            continue
        (objective, med_u), sid = best
        sample = tradeoffs[sid]
        results.append(
            BinResult(
                k, (lo, hi), sid, objective, percentile(sample.privacy_values, 50), med_u,
                sample.mechanism, sample.params,
            )
        )
    return results


def export_trajectory(tradeoffs: dict[str, TradeoffSample], resolution: int = 101) -> list[dict]:
    """Utility band (min/median/max) per mechanism and privacy cell.

    Cell k covers privacy values rounding to ``k / (resolution - 1)``.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    cells: dict[tuple[str, int], list[float]] = {}
    for sample in tradeoffs.values():
        for p, u in zip(sample.privacy_values, sample.utility_values):
            k = int(round(p * (resolution - 1)))
            cells.setdefault((sample.mechanism.value, k), []).append(u)
    rows = []
    for (group, k), us in sorted(cells.items()):
        rows.append({
            "mechanism": group,
            "privacy": k / (resolution - 1),
            "count": len(us),
            "min_utility": min(us),
            "median_utility": percentile(us, 50),
            "max_utility": max(us),
        })
    return rows
