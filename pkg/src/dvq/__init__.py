"""Long-term forecasting and gap filling with double vector quantization."""

__version__ = "0.1.0"

from .dvq import DvqModel, ForecastEnsemble, fit, forecast, monte_carlo, predict_step, simulate
from .errors import DvqError, InvalidInputError
from .series import TimeSeries, read_csv, write_csv

__all__ = [
    "DvqError",
    "DvqModel",
    "ForecastEnsemble",
    "InvalidInputError",
    "TimeSeries",
    "fit",
    "forecast",
    "monte_carlo",
    "predict_step",
    "read_csv",
    "simulate",
    "write_csv",
]
