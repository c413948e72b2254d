"""Evaluation harness: subset schedule, repeated maskings, trade-off assembly, CDFs."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import Mechanism, PrivacySetting, RngSeedPlan, SensorDataset, child_seed, stream_for_seed, user_seed
from .mechanisms import draw_noise
from .metrics import (
    ErrorStats,
    NormalizationConstants,
    ObjectiveWeights,
    error_stats,
    global_errors,
    local_errors,
    privacy_score,
    utility_score,
)

log = logging.getLogger(__name__)

__all__ = [
    "RECORD_COLUMNS",
    "EvaluationRecord",
    "RunOutcome",
    "SubsetSchedule",
    "TradeoffSample",
    "assemble_tradeoffs",
    "default_schedule",
    "emit_cdf",
    "evaluate_grid",
    "evaluate_setting",
    "mask_rows",
    "record_from_row",
    "record_to_row",
    "run_assignment",
]

RECORD_COLUMNS = (
    "setting_id", "mechanism", "params", "subset_size", "subset_index", "repetition",
    "mean_L", "std_L", "entropy_L", "mean_E", "std_E", "entropy_E", "exclusions", "seed",
)


@dataclass(frozen=True)
class SubsetSchedule:
    sizes: tuple[int, ...]
    repetitions_per_size: int = 5

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"subset sizes must be positive and strictly increasing: {sizes}")
        if self.repetitions_per_size < 1:
            raise ValueError("repetitions_per_size must be >= 1")
        object.__setattr__(self, "sizes", sizes)


def default_schedule(total_users: int, repetitions_per_size: int = 5) -> SubsetSchedule:
    """Sizes 50..500 step 50, then 1000 step 500, then the full user count."""
    if total_users < 1:
        raise ValueError("total_users must be >= 1")
    sizes = [s for s in range(50, 501, 50) if s < total_users]
    sizes += [s for s in range(1000, total_users, 500)]
    sizes.append(total_users)
    return SubsetSchedule(tuple(sizes), repetitions_per_size)


@dataclass(frozen=True)
class EvaluationRecord:
    setting_id: str
    mechanism: Mechanism
    params: tuple[float, ...]
    subset_size: int
    subset_index: int
    repetition_index: int
    local_stats: ErrorStats
    global_stats: ErrorStats
    exclusion_count: int
    seed: int

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.setting_id, self.subset_index, self.repetition_index)


def _f(x: float) -> str:
    return format(x, ".17g")


def record_to_row(rec: EvaluationRecord) -> list[str]:
    loc, glo = rec.local_stats, rec.global_stats
    return [
        rec.setting_id, rec.mechanism.value, " ".join(_f(p) for p in rec.params),
        str(rec.subset_size), str(rec.subset_index), str(rec.repetition_index),
        _f(loc.mean), _f(loc.std), _f(loc.entropy), _f(glo.mean), _f(glo.std), _f(glo.entropy),
        str(rec.exclusion_count), str(rec.seed),
    ]


def record_from_row(row: dict[str, str]) -> EvaluationRecord:
    return EvaluationRecord(
        setting_id=row["setting_id"],
        mechanism=Mechanism(row["mechanism"]),
        params=tuple(float(p) for p in row["params"].split()),
        subset_size=int(row["subset_size"]),
        subset_index=int(row["subset_index"]),
        repetition_index=int(row["repetition"]),
        local_stats=ErrorStats(float(row["mean_L"]), float(row["std_L"]), float(row["entropy_L"])),
        global_stats=ErrorStats(float(row["mean_E"]), float(row["std_E"]), float(row["entropy_E"])),
        exclusion_count=int(row["exclusions"]),
        seed=int(row["seed"]),
    )


def mask_rows(
    dataset: SensorDataset,
    rows: Sequence[int],
    settings: Sequence[PrivacySetting],
    subset_index: int,
    rep: int,
    plan: RngSeedPlan,
) -> np.ndarray:
    """Mask each listed user row with its own setting.

    A user's noise comes from a stream keyed on (its setting, subset index,
    repetition, its row), so it never depends on which other users are
    present or what they chose.
    """
    values = dataset.values
    out = np.empty((len(rows), dataset.n_slots))
    run_seeds: dict[str, int] = {}
    for i, (row, setting) in enumerate(zip(rows, settings)):
        if setting.mechanism is Mechanism.NONE:
            out[i] = values[row]
            continue
        if setting.id not in run_seeds:
            run_seeds[setting.id] = plan.derive(setting.id, subset_index, rep)
        rng = stream_for_seed(user_seed(run_seeds[setting.id], int(row)))
        out[i] = values[row] + draw_noise(setting, rng, dataset.n_slots)
    return out


@dataclass(frozen=True)
class RunOutcome:
    local_stats: ErrorStats
    global_stats: ErrorStats
    exclusions: int
    masked: np.ndarray


def run_assignment(
    dataset: SensorDataset,
    rows: Sequence[int],
    settings: Sequence[PrivacySetting],
    subset_index: int,
    rep: int,
    plan: RngSeedPlan,
) -> RunOutcome:
    """Mask ``rows`` (ascending) with per-row settings and compute pooled error stats."""
    rows = np.asarray(rows, dtype=np.int64)
    masked = mask_rows(dataset, rows, settings, subset_index, rep, plan)
    original, missing = dataset.values[rows], dataset.missing[rows]
    loc = local_errors(original, masked, missing)
    glo = global_errors(original, masked, missing, dataset.slots_per_period)
    return RunOutcome(error_stats(loc.errors), error_stats(glo.errors), loc.excluded, masked)


def draw_subset(n_users: int, size: int, run_seed: int) -> np.ndarray:
    if size >= n_users:
        return np.arange(n_users)
    rng = stream_for_seed(child_seed(run_seed, "subset"))
    return np.sort(rng.choice(n_users, size=size, replace=False))


def evaluate_setting(
    setting: PrivacySetting,
    dataset: SensorDataset,
    schedule: SubsetSchedule,
    reps: int | None = None,
    plan: RngSeedPlan = RngSeedPlan(),
    skip: Callable[[tuple[str, int, int]], bool] | None = None,
) -> list[EvaluationRecord]:
    """Evaluate one setting over every (subset size, repetition) cell of the schedule.

    ``reps`` overrides ``schedule.repetitions_per_size``. ``skip`` receives a
    record key and returns True for cells that already exist (resume).
    """
    reps = schedule.repetitions_per_size if reps is None else reps
    if reps < 1:
        raise ValueError("reps must be >= 1")
    records = []
    for subset_index, size in enumerate(schedule.sizes):
        if size > dataset.n_users:
            log.warning("subset size %d exceeds %d users; skipped", size, dataset.n_users)
            continue
        for rep in range(reps):
            if skip is not None and skip((setting.id, subset_index, rep)):
                continue
            seed = plan.derive(setting.id, subset_index, rep)
            rows = draw_subset(dataset.n_users, size, seed)
            out = run_assignment(dataset, rows, [setting] * len(rows), subset_index, rep, plan)
            records.append(
                EvaluationRecord(
                    setting.id, setting.mechanism, setting.params, int(size), subset_index, rep,
                    out.local_stats, out.global_stats, out.exclusions, seed,
                )
            )
    return records


def evaluate_grid(
    settings: Iterable[PrivacySetting],
    dataset: SensorDataset,
    schedule: SubsetSchedule,
    reps: int | None = None,
    plan: RngSeedPlan = RngSeedPlan(),
    threads: int = 1,
    skip: Callable[[tuple[str, int, int]], bool] | None = None,
    sink: Callable[[list[EvaluationRecord]], None] | None = None,
) -> list[EvaluationRecord]:
    """Evaluate settings concurrently; results (and ``sink`` calls) come back in grid order."""
    settings = list(settings)

    def one(setting):
        return evaluate_setting(setting, dataset, schedule, reps, plan, skip)

    out: list[EvaluationRecord] = []
    if threads <= 1:
        batches = map(one, settings)
        for batch in batches:
            if sink is not None:
                sink(batch)
            out.extend(batch)
        return out
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for batch in pool.map(one, settings):
            if sink is not None:
                sink(batch)
            out.extend(batch)
    return out


@dataclass(frozen=True)
class TradeoffSample:
    setting_id: str
    privacy_values: tuple[float, ...]
    utility_values: tuple[float, ...]
    mechanism: Mechanism = Mechanism.NONE
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.privacy_values) != len(self.utility_values):
            raise ValueError("privacy and utility samples must have equal length")


def assemble_tradeoffs(
    records: Iterable[EvaluationRecord],
    w: ObjectiveWeights,
    norm: NormalizationConstants,
) -> dict[str, TradeoffSample]:
    """Score every record and group the (privacy, utility) pairs by setting."""
    grouped: dict[str, list[EvaluationRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.setting_id, []).append(rec)
    out = {}
    for sid, recs in grouped.items():
        out[sid] = TradeoffSample(
            sid,
            tuple(privacy_score(r.local_stats, w, norm) for r in recs),
            tuple(utility_score(r.global_stats, w, norm) for r in recs),
            recs[0].mechanism,
            recs[0].params,
        )
    return out


def emit_cdf(metric_values, points: int = 100) -> list[tuple[float, float]]:
    """Empirical CDF ``F(x) = #{v <= x} / n`` at ``points`` evenly spaced x over [min, max]."""
    v = np.sort(np.asarray(metric_values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("CDF of an empty sample")
    if points < 1:
        raise ValueError("points must be >= 1")
    xs = np.linspace(v[0], v[-1], points) if points > 1 else np.array([v[-1]])
    xs[-1] = v[-1]
    counts = np.searchsorted(v, xs, side="right")
    return [(float(x), float(c) / v.size) for x, c in zip(xs, counts)]
