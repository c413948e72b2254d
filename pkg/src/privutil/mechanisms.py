"""Additive-noise masking mechanisms and grid-search setting generation."""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import Mechanism, PrivacySetting

__all__ = [
    "DEFAULT_SINE_VALUES",
    "CombinationMode",
    "GridProvenance",
    "SettingGrid",
    "draw_noise",
    "generate_laplace_grid",
    "generate_sine_grid",
    "laplace_from_uniform",
    "laplace_noise",
    "load_grid",
    "mask_value",
    "mask_values",
    "save_grid",
    "sine_from_uniform",
    "sine_polyonym_noise",
]

# u - 0.5 is exact for 53-bit uniforms; adding 2**-54 afterwards keeps |v| < 0.5
_HALF_ULP = 2.0**-54


def _sine_default_values() -> tuple[float, ...]:
    fine = [round(0.03 * k, 10) for k in range(1, 11)]
    coarse = [round(0.3 * k, 10) for k in range(2, 7)]
    return tuple(sorted({0.0, *fine, *coarse}))


DEFAULT_SINE_VALUES = _sine_default_values()


def laplace_from_uniform(u, b: float):
    """Inverse-CDF Laplace(0, b) transform of uniforms ``u`` in [0, 1)."""
    v = (np.asarray(u, dtype=np.float64) - 0.5) + _HALF_ULP
    return -b * np.sign(v) * np.log1p(-2.0 * np.abs(v))


def sine_from_uniform(r, theta) -> np.ndarray:
    """Sum of odd powers ``(theta_k * sin(2 pi r)) ** (2k + 1)``, one ``r`` per value."""
    s = np.sin(2.0 * np.pi * np.asarray(r, dtype=np.float64))
    s2 = s * s
    odd = s
    out = np.zeros_like(s)
    last = max((k for k, c in enumerate(theta) if c != 0.0), default=-1)
    for k, coef in enumerate(theta[: last + 1]):
        if coef != 0.0:
            out += coef ** (2 * k + 1) * odd
        if k < last:
            odd = odd * s2
    return out


def draw_noise(setting: PrivacySetting, rng: np.random.Generator, size) -> np.ndarray:
    """Draw ``size`` noise values for ``setting``.

    Exactly one uniform is consumed per value for every mechanism (none for
    NoMask), so stream positions line up with cell positions.
    """
    if setting.mechanism is Mechanism.NONE:
        return np.zeros(size)
    u = rng.random(size)
    if setting.mechanism is Mechanism.LAPLACE:
        return laplace_from_uniform(u, setting.params[0])
    return sine_from_uniform(u, setting.params)


def laplace_noise(b: float, rng: np.random.Generator) -> float:
    if b <= 0:
        raise ValueError("laplace scale must be positive")
    return float(laplace_from_uniform(rng.random(), b))


def sine_polyonym_noise(theta, rng: np.random.Generator) -> float:
    if any(t < 0 for t in theta):
        raise ValueError("sine polyonym coefficients must be non-negative")
    return float(sine_from_uniform(rng.random(), theta))


def mask_value(setting: PrivacySetting, x: float, rng: np.random.Generator) -> float:
    if not math.isfinite(x):
        raise ValueError("cannot mask a non-finite reading")
    if setting.mechanism is Mechanism.NONE:
        return x
    return x + float(draw_noise(setting, rng, None))


def mask_values(setting: PrivacySetting, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if setting.mechanism is Mechanism.NONE:
        return x.copy()
    return x + draw_noise(setting, rng, x.shape)


class GridProvenance(str, enum.Enum):
    LAPLACE_SWEEP = "laplace_sweep"
    SINE_SWEEP = "sine_sweep"
    CUSTOM = "custom"


class CombinationMode(str, enum.Enum):
    MULTISET = "multiset"
    CARTESIAN = "cartesian"


@dataclass(frozen=True)
class SettingGrid:
    settings: tuple[PrivacySetting, ...]
    provenance: GridProvenance = GridProvenance.CUSTOM

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(self.settings))
        ids = [s.id for s in self.settings]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate setting id {dup!r} in grid")

    def __len__(self) -> int:
        return len(self.settings)

    def __iter__(self):
        return iter(self.settings)

    def by_id(self) -> dict[str, PrivacySetting]:
        return {s.id: s for s in self.settings}

    def __add__(self, other: SettingGrid) -> SettingGrid:
        return SettingGrid(self.settings + other.settings, GridProvenance.CUSTOM)

    def thinned(self, max_settings: int) -> SettingGrid:
        """Evenly spaced subset keeping both ends; identity if already small enough."""
        n = len(self.settings)
        if max_settings <= 0 or n <= max_settings:
            return self
        if max_settings == 1:
            return SettingGrid(self.settings[:1], self.provenance)
        picks = sorted({round(i * (n - 1) / (max_settings - 1)) for i in range(max_settings)})
        return SettingGrid(tuple(self.settings[i] for i in picks), self.provenance)


def generate_laplace_grid(b_start: float = 0.001, b_step: float = 0.001, b_end: float = 10.0) -> SettingGrid:
    if not (0 < b_start <= b_end) or b_step <= 0:
        raise ValueError(f"invalid laplace grid bounds ({b_start}, {b_step}, {b_end})")
    tol = 1e-12
    k = math.floor((b_end - b_start) / b_step)
    while b_start + (k + 1) * b_step <= b_end + tol:
        k += 1
    while k > 0 and b_start + k * b_step > b_end + tol:
        k -= 1
    scales = [round(b_start + i * b_step, 12) for i in range(k + 1)]
    return SettingGrid(tuple(PrivacySetting.laplace(b) for b in scales), GridProvenance.LAPLACE_SWEEP)


def generate_sine_grid(
    value_set=DEFAULT_SINE_VALUES,
    n_coeffs: int = 5,
    combination_mode: CombinationMode | str = CombinationMode.MULTISET,
) -> SettingGrid:
    """All coefficient vectors of length ``n_coeffs`` drawn from ``value_set``.

    Multiset mode yields each unordered combination once as an ascending
    tuple; Cartesian mode yields every ordered tuple.
    """
    values = sorted({float(v) for v in value_set})
    if not values or values[0] < 0:
        raise ValueError("value_set must be non-empty and non-negative")
    if n_coeffs < 1:
        raise ValueError("n_coeffs must be at least 1")
    mode = CombinationMode(combination_mode)
    if mode is CombinationMode.MULTISET:
        combos = itertools.combinations_with_replacement(values, n_coeffs)
    else:
        combos = itertools.product(values, repeat=n_coeffs)
    return SettingGrid(tuple(PrivacySetting.sine(c) for c in combos), GridProvenance.SINE_SWEEP)


def save_grid(path, grid: SettingGrid) -> None:
    width = max((len(s.params) for s in grid), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "mechanism", *(f"p{i}" for i in range(width))])
        for s in grid:
            cells = [format(p, ".17g") for p in s.params]
            writer.writerow([s.id, s.mechanism.value, *cells, *[""] * (width - len(cells))])


def load_grid(path) -> SettingGrid:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["id", "mechanism"]:
            raise ValueError(f"{path}: grid header must start with id,mechanism")
        extra = [h for h in header[2:] if not (h.startswith("p") and h[1:].isdigit())]
        if extra:
            raise ValueError(f"{path}: unexpected grid columns {extra}")
        settings = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                params = tuple(float(c) for c in row[2:] if c != "")
                settings.append(PrivacySetting(Mechanism(row[1]), params, row[0]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return SettingGrid(tuple(settings), GridProvenance.CUSTOM)
