"""Shared domain types and seeded randomness plumbing."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mechanism",
    "PrivacySetting",
    "RngSeedPlan",
    "SensorDataset",
    "child_seed",
    "derive_seed",
    "stream_for_seed",
    "user_seed",
]


class Mechanism(str, enum.Enum):
    LAPLACE = "laplace"
    SINE = "sine"
    NONE = "none"


def _fmt_param(value: float) -> str:
    return format(value, ".12g")


@dataclass(frozen=True)
class PrivacySetting:
    """A masking mechanism together with its parameter vector.

    The id is derived from the mechanism and parameters unless given
    explicitly, and :meth:`from_id` inverts the derived form, so ids of
    the shape ``laplace_0.005`` or ``sine_0_0_0_0.18_0`` are self-describing.
    """

    mechanism: Mechanism
    params: tuple[float, ...] = ()
    id: str = ""

    def __post_init__(self):
        mech = Mechanism(self.mechanism)
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "mechanism", mech)
        object.__setattr__(self, "params", params)
        if not all(math.isfinite(p) for p in params):
            raise ValueError(f"non-finite parameter in {params}")
        if mech is Mechanism.LAPLACE:
            if len(params) != 1 or params[0] <= 0:
                raise ValueError(f"laplace needs one positive scale, got {params}")
        elif mech is Mechanism.SINE:
            if len(params) < 1 or any(p < 0 for p in params):
                raise ValueError(f"sine polyonym needs >=1 non-negative coefficients, got {params}")
        elif params:
            raise ValueError("the no-mask setting takes no parameters")
        if not self.id:
            object.__setattr__(self, "id", self.default_id())

    @classmethod
    def laplace(cls, b: float) -> PrivacySetting:
        return cls(Mechanism.LAPLACE, (b,))

    @classmethod
    def sine(cls, theta) -> PrivacySetting:
        return cls(Mechanism.SINE, tuple(theta))

    @classmethod
    def nomask(cls) -> PrivacySetting:
        return cls(Mechanism.NONE, ())

    def default_id(self) -> str:
        if self.mechanism is Mechanism.NONE:
            return "none"
        return "_".join([self.mechanism.value, *(_fmt_param(p) for p in self.params)])

    @classmethod
    def from_id(cls, setting_id: str) -> PrivacySetting:
        """Parse a self-describing id; raises ValueError if it is not one."""
        head, *rest = setting_id.strip().split("_")
        try:
            mech = Mechanism(head)
            params = tuple(float(p) for p in rest)
        except ValueError:
            raise ValueError(f"unknown setting id {setting_id!r}") from None
        return cls(mech, params)


def _stable_hash64(*parts) -> int:
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngSeedPlan:
    """Master seed from which every stochastic stage derives its own seed."""

    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def derive(self, setting_id: str, subset_idx: int, rep_idx: int) -> int:
        return derive_seed(self, setting_id, subset_idx, rep_idx)


def derive_seed(plan: RngSeedPlan, setting_id: str, subset_idx: int, rep_idx: int) -> int:
    """64-bit child seed from BLAKE2b over the canonical key tuple.

    The hash is platform independent, so derived seeds are the same on any
    machine and Python version.
    """
    return _stable_hash64("seed", plan.master_seed, setting_id, int(subset_idx), int(rep_idx))


def child_seed(seed: int, tag: str, index: int = 0) -> int:
    """Independent sub-stream seed of ``seed`` labelled by ``tag``."""
    return _stable_hash64(tag, int(seed), int(index))


def user_seed(run_seed: int, user_row: int) -> int:
    """Per-user noise seed within a run; depends on nothing but its inputs."""
    return child_seed(run_seed, "user", user_row)


def stream_for_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class SensorDataset:
    """User x slot matrix of non-negative readings with a missing-value mask.

    Missing cells hold 0.0 in ``values``; every consumer must honour
    ``missing``. A trailing partial aggregation period is dropped.
    """

    values: np.ndarray
    missing: np.ndarray | None = None
    slots_per_period: int = 48
    user_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"values must be a non-empty 2-d matrix, got shape {values.shape}")
        if self.missing is None:
            missing = ~np.isfinite(values)
        else:
            missing = np.array(self.missing, dtype=bool, copy=True)
            if missing.shape != values.shape:
                raise ValueError("missing mask shape does not match values")
            missing |= ~np.isfinite(values)
        spp = int(self.slots_per_period)
        if spp < 1:
            raise ValueError("slots_per_period must be positive")
        n_periods = values.shape[1] // spp
        if n_periods < 1:
            raise ValueError(
                f"{values.shape[1]} slots do not fill a single period of {spp}"
            )
        keep = n_periods * spp
        values, missing = values[:, :keep], missing[:, :keep]
        bad = (~missing) & (values < 0)
        if bad.any():
            u, t = np.argwhere(bad)[0]
            raise ValueError(f"negative reading {values[u, t]} at user row {u}, slot {t}")
        values[missing] = 0.0
        values.setflags(write=False)
        missing.setflags(write=False)
        user_ids = tuple(self.user_ids) or tuple(f"u{i}" for i in range(values.shape[0]))
        if len(user_ids) != values.shape[0]:
            raise ValueError("user_ids length does not match number of rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "slots_per_period", spp)
        object.__setattr__(self, "user_ids", user_ids)

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_slots(self) -> int:
        return self.values.shape[1]

    @property
    def n_periods(self) -> int:
        return self.n_slots // self.slots_per_period

    def subset(self, rows) -> SensorDataset:
        rows = np.asarray(rows, dtype=np.int64)
        return SensorDataset(
            self.values[rows],
            self.missing[rows],
            self.slots_per_period,
            tuple(self.user_ids[i] for i in rows),
        )
