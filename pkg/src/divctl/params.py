"""Model parameter records shared by every solver.

Records are frozen dataclasses.  Derived quantities (``rho`` for the GBM
discount, ``b`` and ``sigma_tilde_sq`` for the Vasicek rate) are computed in
``__post_init__`` from the raw fields, so constructing a record never fails;
the ``validate_*`` functions enforce the constraints and raise
:class:`ParameterError` naming the first violated one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "ParameterError",
    "Exponential",
    "DiscreteMixture",
    "ClaimDist",
    "RiskModel",
    "GbmDiscount",
    "VasicekDiscount",
    "validate_claims",
    "validate_risk_model",
    "validate_gbm",
    "validate_vasicek",
]

MIXTURE_WEIGHT_TOL = 1e-12


class ParameterError(ValueError):
    """A parameter record violates one of its constraints.

    ``field`` is the name of the offending field (``"c"``, ``"rho"``, ...),
    which the config layer maps back to a key path.
    """

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True, slots=True)
class Exponential:
    """Exponential claim sizes with rate ``beta`` (mean ``1/beta``)."""

    beta: float

    def mean(self) -> float:
        return 1.0 / self.beta


@dataclass(frozen=True, slots=True)
class DiscreteMixture:
    """Claim sizes taking value ``atoms[i]`` with probability ``weights[i]``."""

    atoms: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(float(a) for a in self.atoms))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def mean(self) -> float:
        return float(np.dot(self.atoms, self.weights))


ClaimDist = Union[Exponential, DiscreteMixture]


@dataclass(frozen=True, slots=True)
class RiskModel:
    """Compound Poisson surplus with bounded dividend rate.

    Attributes
    ----------
    c:
        Premium rate per unit time.
    lam:
        Claim arrival intensity.
    claims:
        Claim-size distribution.
    M:
        Maximum dividend rate.
    """

    c: float
    lam: float
    claims: ClaimDist
    M: float


@dataclass(frozen=True, slots=True)
class GbmDiscount:
    """Discount factor ``exp(-r0 - m t - delta B_t)``; ``rho = m - delta**2/2``."""

    r0: float
    m: float
    delta: float
    rho: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rho", self.m - self.delta**2 / 2.0)


@dataclass(frozen=True, slots=True)
class VasicekDiscount:
    """Short rate ``dr = a (b_bar - r) dt + delta_bar dB`` started at ``r0``.

    ``b = b_bar - delta_bar**2 / (2 a**2)`` is the effective long-run rate of
    the integrated process and ``sigma_tilde_sq = delta_bar**2 / (2 a)`` the
    stationary variance of the rate.
    """

    r0: float
    a: float
    b_bar: float
    delta_bar: float
    b: float = field(init=False)
    sigma_tilde_sq: float = field(init=False)

    def __post_init__(self):
        if self.a > 0:
            b = self.b_bar - self.delta_bar**2 / (2.0 * self.a**2)
            s2 = self.delta_bar**2 / (2.0 * self.a)
        else:
            b = math.nan
            s2 = math.nan
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma_tilde_sq", s2)

    @property
    def sigma_tilde(self) -> float:
        return math.sqrt(self.sigma_tilde_sq)


def _finite(name: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ParameterError(name, f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(v):
        raise ParameterError(name, f"{name} must be finite, got {v}")
    return v


def validate_claims(claims: ClaimDist) -> ClaimDist:
    if isinstance(claims, Exponential):
        if not _finite("beta", claims.beta) > 0:
            raise ParameterError("beta", "beta must be positive")
        return claims
    if isinstance(claims, DiscreteMixture):
        if len(claims.atoms) == 0 or len(claims.atoms) != len(claims.weights):
            raise ParameterError("atoms", "mixture needs equally many atoms and weights (at least one)")
        for y in claims.atoms:
            if not _finite("atoms", y) > 0:
                raise ParameterError("atoms", "mixture atoms must be strictly positive")
        for w in claims.weights:
            if not _finite("weights", w) > 0:
                raise ParameterError("weights", "mixture weights must be strictly positive")
        total = math.fsum(claims.weights)
        if abs(total - 1.0) > MIXTURE_WEIGHT_TOL:
            raise ParameterError("weights", f"mixture weights must sum to 1 (sum={total!r})")
        return claims
    raise ParameterError("claims", f"unsupported claim distribution {type(claims).__name__}")


def validate_risk_model(raw: RiskModel) -> RiskModel:
    if not _finite("c", raw.c) > 0:
        raise ParameterError("c", "c must be positive")
    if not _finite("lam", raw.lam) >= 0:
        raise ParameterError("lam", "lambda must be nonnegative")
    validate_claims(raw.claims)
    if not _finite("M", raw.M) >= 0:
        raise ParameterError("M", "M must be nonnegative")
    return raw


def validate_gbm(raw: GbmDiscount) -> GbmDiscount:
    _finite("r0", raw.r0)
    _finite("m", raw.m)
    if not _finite("delta", raw.delta) >= 0:
        raise ParameterError("delta", "delta must be nonnegative")
    if not raw.rho > 0:
        raise ParameterError("rho", f"rho nonpositive (rho = m - delta^2/2 = {raw.rho!r})")
    return raw


def validate_vasicek(raw: VasicekDiscount) -> VasicekDiscount:
    _finite("r0", raw.r0)
    if not _finite("a", raw.a) > 0:
        raise ParameterError("a", "a must be positive")
    _finite("b_bar", raw.b_bar)
    if not _finite("delta_bar", raw.delta_bar) >= 0:
        raise ParameterError("delta_bar", "delta_bar must be nonnegative")
    if not raw.b > 0:
        raise ParameterError(
            "b", f"b nonpositive (b = b_bar - delta_bar^2/(2 a^2) = {raw.b!r}); value function unbounded"
        )
    return raw
