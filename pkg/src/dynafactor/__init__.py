"""Factor modeling of high-dimensional time series with dynamically
dependent factors and spiked idiosyncratic noise."""

from ._errors import DynaFactorError, NumericalError, RankDeficiencyError, ValidationError
from .factor import FactorFit, FitConfig, fit, fit_from_moments
from .panel import TimeSeriesPanel, center, difference, load_csv, save_csv

__version__ = "0.1.0"

__all__ = [
    "DynaFactorError",
    "NumericalError",
    "RankDeficiencyError",
    "ValidationError",
    "FactorFit",
    "FitConfig",
    "fit",
    "fit_from_moments",
    "TimeSeriesPanel",
    "center",
    "difference",
    "load_csv",
    "save_csv",
]
