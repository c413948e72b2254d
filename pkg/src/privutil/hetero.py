"""Heterogeneous systems: every user masks with a setting of their own choosing.

User choices are modelled as histograms over a palette of settings. Each
histogram is simulated by assigning users to settings, masking every user
with their own setting, and scoring per-user privacy and system utility.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import PrivacySetting, RngSeedPlan, SensorDataset, stream_for_seed
from .metrics import (
    ErrorStats,
    NormalizationConstants,
    ObjectiveWeights,
    error_stats,
    iqr,
    local_errors,
    percentile,
    privacy_score,
    utility_score,
)
from .sweep import run_assignment

__all__ = [
    "AssignmentHistogram",
    "HeteroRep",
    "HeteroRunResult",
    "assign_users",
    "enumerate_histograms",
    "heatmap_rows",
    "heatmap_tables",
    "simulate",
    "simulate_many",
    "units_for_step",
]


def units_for_step(step) -> int:
    """Number of share units for a step such as 0.125; raises if 1/step is not integral."""
    step = Fraction(step).limit_denominator(10**6) if not isinstance(step, Fraction) else step
    if step <= 0 or step > 1:
        raise ValueError(f"step must lie in (0, 1], got {float(step)}")
    inv = 1 / step
    units = round(inv)
    if abs(float(inv) - units) > 1e-9:
        raise ValueError(f"1/step must be an integer, got {float(inv):.6g}")
    return units


@dataclass(frozen=True)
class AssignmentHistogram:
    """User-share histogram over a palette; shares are ``counts[i] / units``."""

    settings: tuple[PrivacySetting, ...]
    counts: tuple[int, ...]
    units: int

    def __post_init__(self):
        if len(self.settings) != len(self.counts) or not self.settings:
            raise ValueError("one count per palette setting is required")
        if any(c < 0 for c in self.counts) or sum(self.counts) != self.units:
            raise ValueError(f"counts {self.counts} must be non-negative and sum to {self.units}")

    @property
    def id(self) -> str:
        return "h" + "-".join(str(c) for c in self.counts)

    @property
    def shares(self) -> dict[str, float]:
        return {s.id: c / self.units for s, c in zip(self.settings, self.counts)}

    @property
    def dominant(self) -> PrivacySetting | None:
        top = max(self.counts)
        holders = [s for s, c in zip(self.settings, self.counts) if c == top]
        return holders[0] if len(holders) == 1 else None

    @property
    def dominant_share(self) -> float:
        return max(self.counts) / self.units

    @property
    def pure(self) -> PrivacySetting | None:
        return self.dominant if max(self.counts) == self.units else None


def enumerate_histograms(palette: Sequence[PrivacySetting], step=Fraction(1, 8)) -> list[AssignmentHistogram]:
    """Every composition of ``1/step`` share units over the palette (stars and bars)."""
    palette = tuple(palette)
    if not palette:
        raise ValueError("palette must not be empty")
    if len({s.id for s in palette}) != len(palette):
        raise ValueError("palette setting ids must be unique")
    units = units_for_step(step)
    k = len(palette)
    out = []
    for bars in itertools.combinations(range(units + k - 1), k - 1):
        edges = (-1, *bars, units + k - 1)
        counts = tuple(b - a - 1 for a, b in zip(edges, edges[1:]))
        out.append(AssignmentHistogram(palette, counts, units))
    return out


def block_sizes(hist: AssignmentHistogram, n_users: int) -> list[int]:
    """Round each share to a user count; the rounding remainder goes one user at a time
    to settings ordered by share (largest first, palette order on ties)."""
    sizes = [math.floor(c * n_users / hist.units + 0.5) for c in hist.counts]
    order = sorted((i for i, c in enumerate(hist.counts) if c > 0), key=lambda i: (-hist.counts[i], i))
    remainder = n_users - sum(sizes)
    i = 0
    while remainder > 0:
        sizes[order[i % len(order)]] += 1
        remainder -= 1
        i += 1
    while remainder < 0:
        j = order[i % len(order)]
        if sizes[j] > 0:
            sizes[j] -= 1
            remainder += 1
        i += 1
    return sizes


def assign_users(hist: AssignmentHistogram, users: Sequence[int], rng: np.random.Generator) -> dict[int, PrivacySetting]:
    """Shuffle users, then hand out contiguous blocks in palette order."""
    shuffled = rng.permutation(np.asarray(users, dtype=np.int64))
    out = {}
    start = 0
    for setting, size in zip(hist.settings, block_sizes(hist, len(shuffled))):
        for u in shuffled[start : start + size]:
            out[int(u)] = setting
        start += size
    return out


@dataclass(frozen=True)
class HeteroRep:
    local_stats: ErrorStats
    global_stats: ErrorStats
    exclusions: int
    system_utility: float
    user_privacy: tuple[float, ...]


@dataclass(frozen=True)
class HeteroRunResult:
    histogram: AssignmentHistogram
    reps: tuple[HeteroRep, ...]

    @property
    def dominant(self) -> str | None:
        d = self.histogram.dominant
        return None if d is None else d.id

    @property
    def per_user_privacy(self) -> tuple[float, ...]:
        return tuple(p for r in self.reps for p in r.user_privacy)

    @property
    def system_utility_values(self) -> tuple[float, ...]:
        return tuple(r.system_utility for r in self.reps)

    @property
    def privacy_median(self) -> float:
        return percentile(self.per_user_privacy, 50)

    @property
    def privacy_iqr(self) -> float:
        return iqr(self.per_user_privacy)

    @property
    def utility_median(self) -> float:
        return percentile(self.system_utility_values, 50)

    @property
    def utility_iqr(self) -> float:
        return iqr(self.system_utility_values)


def _user_privacy(dataset, rows, masked, w, norm) -> tuple[float, ...]:
    out = []
    for i, row in enumerate(rows):
        sample = local_errors(dataset.values[row], masked[i], dataset.missing[row])
        out.append(privacy_score(error_stats(sample.errors), w, norm))
    return tuple(out)


def simulate(
    hist: AssignmentHistogram,
    dataset: SensorDataset,
    reps: int,
    plan: RngSeedPlan,
    w: ObjectiveWeights,
    norm: NormalizationConstants,
    users: Sequence[int] | None = None,
    subset_index: int = 0,
    resample_assignment: bool = False,
) -> HeteroRunResult:
    """Simulate ``reps`` maskings of ``users`` (default: everyone) under ``hist``.

    The assignment is drawn once per histogram unless ``resample_assignment``.
    Noise streams are those of the homogeneous harness for the same
    ``subset_index``, so a pure histogram reproduces homogeneous results.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rows = np.arange(dataset.n_users) if users is None else np.sort(np.asarray(users, dtype=np.int64))
    results = []
    assignment = None
    for rep in range(reps):
        if assignment is None or resample_assignment:
            key = rep if resample_assignment else 0
            rng = stream_for_seed(plan.derive("assign:" + hist.id, subset_index, key))
            assignment = assign_users(hist, rows, rng)
        settings = [assignment[int(r)] for r in rows]
        out = run_assignment(dataset, rows, settings, subset_index, rep, plan)
        results.append(
            HeteroRep(
                out.local_stats,
                out.global_stats,
                out.exclusions,
                utility_score(out.global_stats, w, norm),
                _user_privacy(dataset, rows, out.masked, w, norm),
            )
        )
    return HeteroRunResult(hist, tuple(results))


def simulate_many(
    hists: Sequence[AssignmentHistogram],
    dataset: SensorDataset,
    reps: int,
    plan: RngSeedPlan,
    w: ObjectiveWeights,
    norm: NormalizationConstants,
    threads: int = 1,
    **kwargs,
) -> list[HeteroRunResult]:
    def one(h):
        return simulate(h, dataset, reps, plan, w, norm, **kwargs)

    if threads <= 1:
        return [one(h) for h in hists]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, hists))


def heatmap_tables(results: Sequence[HeteroRunResult]) -> dict[tuple[str, str], dict[tuple[str, float], float]]:
    """Median and IQR of pooled privacy and utility per (dominant setting, dominant share).

    Histograms without a unique dominant setting are left out.
    """
    groups: dict[tuple[str, float], tuple[list[float], list[float]]] = {}
    for res in results:
        if res.dominant is None:
            continue
        key = (res.dominant, res.histogram.dominant_share)
        priv, util = groups.setdefault(key, ([], []))
        priv.extend(res.per_user_privacy)
        util.extend(res.system_utility_values)
    tables: dict[tuple[str, str], dict[tuple[str, float], float]] = {
        (m, s): {} for m in ("privacy", "utility") for s in ("median", "iqr")
    }
    for key in sorted(groups):
        priv, util = groups[key]
        tables[("privacy", "median")][key] = percentile(priv, 50)
        tables[("privacy", "iqr")][key] = iqr(priv)
        tables[("utility", "median")][key] = percentile(util, 50)
        tables[("utility", "iqr")][key] = iqr(util)
    return tables


def heatmap_rows(tables) -> list[dict]:
    rows = []
    for (metric, stat), cells in tables.items():
        for (dom, share), value in cells.items():
            rows.append({
                "dominant_setting": dom, "dominant_share": share,
                "metric": metric, "statistic": stat, "value": value,
            })
    rows.sort(key=lambda r: (r["metric"], r["statistic"], r["dominant_setting"], -r["dominant_share"]))
    return rows
