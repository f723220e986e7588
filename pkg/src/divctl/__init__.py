"""Optimal bounded-rate dividends for a compound Poisson surplus under stochastic discounting."""

from . import _threads

_threads.preconfigure()

from .params import (  # noqa: E402
    DiscreteMixture,
    Exponential,
    GbmDiscount,
    ParameterError,
    RiskModel,
    VasicekDiscount,
    validate_gbm,
    validate_risk_model,
    validate_vasicek,
)

__version__ = "0.1.0"

__all__ = [
    "DiscreteMixture",
    "Exponential",
    "GbmDiscount",
    "ParameterError",
    "RiskModel",
    "VasicekDiscount",
    "validate_gbm",
    "validate_risk_model",
    "validate_vasicek",
]
