"""Synthetic smart-meter data, dataset CSV ingestion and result-table persistence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .core import SensorDataset
from .mechanisms import load_grid, save_grid
from .sweep import RECORD_COLUMNS

__all__ = [
    "DataFormatError",
    "SCHEMAS",
    "SchemaError",
    "SyntheticSpec",
    "cell_count",
    "default_daily_profile",
    "format_cell",
    "generate_synthetic",
    "load_csv",
    "load_grid",
    "load_results",
    "read_manifest",
    "save_csv",
    "save_grid",
    "save_results",
    "write_manifest",
]


class DataFormatError(ValueError):
    """Malformed dataset file; the message names the offending line."""


class SchemaError(ValueError):
    """Result table header does not match the expected schema."""


def default_daily_profile(slots_per_day: int = 48) -> np.ndarray:
    """Mean-one diurnal household shape: low night, morning shoulder, evening peak."""
    hour = (np.arange(slots_per_day) + 0.5) * 24.0 / slots_per_day

    def bump(center, width, height):
        return height * np.exp(-0.5 * ((hour - center) / width) ** 2)

    p = 0.35 + bump(8.0, 1.5, 0.5) + bump(13.0, 2.5, 0.15) + bump(19.0, 2.0, 1.0)
    return p / p.mean()


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 500
    n_days: int = 30
    slots_per_day: int = 48
    base_load: float = 0.25
    daily_profile: tuple[float, ...] | None = None
    user_scale_spread: float = 0.4
    noise_cv: float = 0.5
    missing_rate: float = 0.1
    zero_rate: float = 0.001

    def __post_init__(self):
        if self.n_users < 1 or self.n_days < 1 or self.slots_per_day < 1:
            raise ValueError("n_users, n_days and slots_per_day must be positive")
        if self.base_load <= 0:
            raise ValueError("base_load must be positive")
        if self.user_scale_spread < 0 or self.noise_cv < 0:
            raise ValueError("user_scale_spread and noise_cv must be non-negative")
        if not (0 <= self.missing_rate < 1 and 0 <= self.zero_rate < 1):
            raise ValueError("missing_rate and zero_rate must lie in [0, 1)")
        if self.daily_profile is not None:
            prof = tuple(float(v) for v in self.daily_profile)
            if len(prof) != self.slots_per_day or min(prof) < 0:
                raise ValueError("daily_profile needs slots_per_day non-negative multipliers")
            object.__setattr__(self, "daily_profile", prof)

    def profile(self) -> np.ndarray:
        if self.daily_profile is None:
            return default_daily_profile(self.slots_per_day)
        return np.asarray(self.daily_profile, dtype=np.float64)


def cell_count(spec: SyntheticSpec) -> int:
    return spec.n_users * spec.n_days * spec.slots_per_day


def _mean_one_lognormal(rng: np.random.Generator, cv: float, size) -> np.ndarray:
    if cv == 0:
        return np.ones(size)
    sigma2 = math.log1p(cv * cv)
    return rng.lognormal(-0.5 * sigma2, math.sqrt(sigma2), size)


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SensorDataset:
    """Diurnal profile x per-user scale x multiplicative lognormal noise.

    User scales, consumption noise, missingness and exact zeros each come
    from their own child stream, so e.g. changing ``missing_rate`` leaves
    every non-missing value untouched.
    """
    scale_ss, noise_ss, missing_ss, zero_ss = np.random.SeedSequence(int(seed)).spawn(4)
    shape = (spec.n_users, spec.n_days * spec.slots_per_day)
    scales = _mean_one_lognormal(np.random.default_rng(scale_ss), spec.user_scale_spread, spec.n_users)
    profile = np.tile(spec.profile(), spec.n_days)
    values = scales[:, None] * spec.base_load * profile[None, :]
    values = values * _mean_one_lognormal(np.random.default_rng(noise_ss), spec.noise_cv, shape)
    missing = np.random.default_rng(missing_ss).random(shape) < spec.missing_rate
    zeros = np.random.default_rng(zero_ss).random(shape) < spec.zero_rate
    values[zeros] = 0.0
    np.clip(values, 0.0, None, out=values)
    width = len(str(spec.n_users - 1))
    ids = tuple(f"u{i:0{width}d}" for i in range(spec.n_users))
    return SensorDataset(values, missing, spec.slots_per_day, ids)


def save_csv(path, dataset: SensorDataset) -> None:
    """Long format ``user_id,slot_index,value``; missing cells have an empty value."""
    with open(path, "w", newline="") as fh:
        fh.write("user_id,slot_index,value\n")
        for uid, vals, miss in zip(dataset.user_ids, dataset.values, dataset.missing):
            fh.writelines(
                f"{uid},{t},\n" if m else f"{uid},{t},{format(v, '.17g')}\n"
                for t, (v, m) in enumerate(zip(vals.tolist(), miss.tolist()))
            )


def load_csv(path, slots_per_period: int = 48) -> SensorDataset:
    """Read a long-format dataset; users keep their first-appearance order.

    Slots never observed for a user are marked missing.
    """
    cells: dict[tuple[int, int], float] = {}
    users: dict[str, int] = {}
    max_slot = -1
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user_id", "slot_index", "value"]:
            raise DataFormatError(f"{path}:1: header must be user_id,slot_index,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            uid, slot_s, value_s = (c.strip() for c in row)
            if not uid:
                raise DataFormatError(f"{path}:{lineno}: empty user_id")
            try:
                slot = int(slot_s)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer slot_index {slot_s!r}") from None
            if slot < 0:
                raise DataFormatError(f"{path}:{lineno}: negative slot_index {slot}")
            if value_s == "":
                value = math.nan
            else:
                try:
                    value = float(value_s)
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: non-numeric value {value_s!r}") from None
                if not math.isfinite(value):
                    raise DataFormatError(f"{path}:{lineno}: non-finite value {value_s!r}")
                if value < 0:
                    raise DataFormatError(f"{path}:{lineno}: negative reading {value_s}")
            row_idx = users.setdefault(uid, len(users))
            if (row_idx, slot) in cells:
                raise DataFormatError(f"{path}:{lineno}: duplicate reading for ({uid}, {slot})")
            cells[(row_idx, slot)] = value
            max_slot = max(max_slot, slot)
    if not users:
        raise DataFormatError(f"{path}: no readings")
    values = np.full((len(users), max_slot + 1), np.nan)
    for (r, t), v in cells.items():
        values[r, t] = v
    n_slots = values.shape[1]
    spp = min(slots_per_period, n_slots)
    return SensorDataset(values, np.isnan(values), spp, tuple(users))


_RECORD_TYPES = dict(
    zip(RECORD_COLUMNS, ["str", "str", "str", "int", "int", "int",
                         "float", "float", "float", "float", "float", "float", "int", "int"])
)

SCHEMAS: dict[str, dict[str, str]] = {
    "records": _RECORD_TYPES,
    "bins": {
        "bin_index": "int", "lo": "float", "hi": "float", "setting_id": "optstr",
        "mechanism": "optstr", "params": "str", "objective": "optfloat",
        "median_privacy": "optfloat", "median_utility": "optfloat",
    },
    "trajectory": {
        "mechanism": "str", "privacy": "float", "count": "int",
        "min_utility": "float", "median_utility": "float", "max_utility": "float",
    },
    "heatmap": {
        "dominant_setting": "str", "dominant_share": "float", "metric": "str",
        "statistic": "str", "value": "float",
    },
    "hetero_log": {
        "histogram_id": "str", "dominant_setting": "optstr", "dominant_share": "float",
        "repetition": "int", "system_utility": "float", "privacy_median": "float",
        "privacy_iqr": "float", "mean_E": "float", "std_E": "float", "entropy_E": "float",
    },
    "norm": {
        "max_mean_L": "float", "max_std_L": "float", "max_entropy_L": "float",
        "max_mean_E": "float", "max_std_E": "float", "max_entropy_E": "float",
    },
    "cdf": {"mechanism": "str", "x": "float", "F": "float"},
    "palette": {"setting_id": "str"},
}


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _parse_cell(text: str, kind: str):
    if kind.startswith("opt"):
        if text == "":
            return None
        kind = kind[3:]
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text)
    return text


def check_header(header: list[str], columns, where: str) -> None:
    missing = [c for c in columns if c not in header]
    extra = [c for c in header if c not in columns]
    if missing or extra or list(header) != list(columns):
        parts = []
        if missing:
            parts.append(f"missing column(s) {missing}")
        if extra:
            parts.append(f"unexpected column(s) {extra}")
        if not parts:
            parts.append(f"columns out of order, expected {list(columns)}")
        raise SchemaError(f"{where}: " + "; ".join(parts))


def save_results(path, kind: str, rows) -> None:
    """Write a typed table; reals are written with 17 significant digits."""
    columns = list(SCHEMAS[kind])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row[c]) for c in columns])


def load_results(path, kind: str) -> list[dict[str, Any]]:
    schema = SCHEMAS[kind]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected header {list(schema)}")
        check_header(header, schema, str(path))
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                out.append({c: _parse_cell(v, schema[c]) for c, v in zip(header, row)})
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return out


def write_manifest(path, entries: dict[str, Any]) -> None:
    """Plain ``key=value`` lines in insertion order; no timestamps, so reruns are byte-identical."""
    lines = [f"{k}={format_cell(v)}\n" for k, v in entries.items()]
    Path(path).write_text("".join(lines))


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key] = value
    return out
