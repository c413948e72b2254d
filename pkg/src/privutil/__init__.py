"""Privacy-utility optimization of additive-noise masking for sensor data."""

__version__ = "0.1.0"

from .core import Mechanism, PrivacySetting, RngSeedPlan, SensorDataset, derive_seed
from .metrics import ErrorStats, NormalizationConstants, ObjectiveWeights

__all__ = [
    "ErrorStats",
    "Mechanism",
    "NormalizationConstants",
    "ObjectiveWeights",
    "PrivacySetting",
    "RngSeedPlan",
    "SensorDataset",
    "derive_seed",
]
