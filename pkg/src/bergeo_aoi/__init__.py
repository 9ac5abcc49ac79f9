"""Age of Information in a multi-source Ber/Geo/1/1 bufferless preemptive link."""

from .model import (
    ConfigError,
    DerivedParams,
    SystemConfig,
    derive_all,
    derive_params,
    effective_generation_probability,
    load_config,
    overall_generation_probability,
    validate_config,
)
from .analytic import aoi_distribution, aoi_mean, aoi_pmf, aoi_tail, stationary_n0, stationary_nm
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DerivedParams",
    "SystemConfig",
    "aoi_distribution",
    "aoi_mean",
    "aoi_pmf",
    "aoi_tail",
    "derive_all",
    "derive_params",
    "effective_generation_probability",
    "load_config",
    "overall_generation_probability",
    "stationary_n0",
    "stationary_nm",
    "validate_config",
]
