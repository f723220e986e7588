"""Exact analytics for the Vasicek short rate and its time integral.

Given ``r_0 = r`` the pair ``(r_t, U_t)`` with ``U_t = int_0^t r_u du`` is
bivariate Gaussian, so ``E[exp(-U_s)] = exp(f(r, s))`` with
``f = -E[U_s] + Var[U_s]/2``.  :func:`log_discount_expectation` evaluates the
equivalent reduced form

    f(r, s) = -b s - (r - b)/a (1 - e^{-a s}) - sigma_tilde^2/(2 a^2) (1 - e^{-a s})^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

from .params import VasicekDiscount, validate_vasicek

__all__ = [
    "OuState",
    "Moments",
    "log_discount_expectation",
    "joint_moments",
    "transition_coefficients",
    "sample_transition",
    "value_upper_bound",
    "perpetual_payout",
]

# below this value of a*t the integrated-variance bracket is evaluated by series
_SERIES_CUTOFF = 1e-3


@dataclass(frozen=True, slots=True)
class OuState:
    r: float
    U: float = 0.0
    t: float = 0.0


@dataclass(frozen=True, slots=True)
class Moments:
    mean_r: float
    mean_U: float
    var_r: float
    var_U: float
    cov_rU: float


@njit(cache=True)
def _moments(a, b_bar, delta_bar, r, t):
    one_m_e = -math.expm1(-a * t)
    one_m_e2 = -math.expm1(-2.0 * a * t)
    mean_r = r * (1.0 - one_m_e) + b_bar * one_m_e
    mean_U = b_bar * t + (r - b_bar) * one_m_e / a
    var_r = delta_bar * delta_bar * one_m_e2 / (2.0 * a)
    u = a * t
    if u < _SERIES_CUTOFF:
        g = u**3 / 3.0 - u**4 / 4.0 + 7.0 * u**5 / 60.0 - u**6 / 24.0
    else:
        g = u - 2.0 * one_m_e + 0.5 * one_m_e2
    var_U = delta_bar * delta_bar * g / (a * a * a)
    cov = delta_bar * delta_bar * one_m_e * one_m_e / (2.0 * a * a)
    return mean_r, mean_U, var_r, var_U, cov


@njit(cache=True)
def _coefficients(a, b_bar, delta_bar, dt):
    # r' = er*r + cr + sr*z1 ;  U' = U + eu*r + cu + ku*z1 + su*z2
    one_m_e = -math.expm1(-a * dt)
    _, _, var_r, var_U, cov = _moments(a, b_bar, delta_bar, 0.0, dt)
    sr = math.sqrt(var_r)
    if sr > 0.0:
        ku = cov / sr
        su = math.sqrt(max(var_U - ku * ku, 0.0))
    else:
        ku = 0.0
        su = math.sqrt(max(var_U, 0.0))
    return 1.0 - one_m_e, b_bar * one_m_e, sr, one_m_e / a, b_bar * dt - b_bar * one_m_e / a, ku, su


def log_discount_expectation(vd: VasicekDiscount, r, s):
    """``f(r, s) = log E[exp(-int_0^s r_u du) | r_0 = r]``; broadcasts over arrays."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    a = vd.a
    one_m_e = -np.expm1(-a * s)
    return -vd.b * s - (r - vd.b) / a * one_m_e - vd.sigma_tilde_sq / (2.0 * a * a) * one_m_e**2


def joint_moments(vd: VasicekDiscount, r: float, t: float) -> Moments:
    """Means, variances and covariance of ``(r_t, U_t)`` given ``r_0 = r``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return Moments(*_moments(vd.a, vd.b_bar, vd.delta_bar, float(r), float(t)))


def transition_coefficients(vd: VasicekDiscount, dt: float) -> tuple[float, ...]:
    """Affine coefficients of the exact one-step map (see ``_coefficients``)."""
    return _coefficients(vd.a, vd.b_bar, vd.delta_bar, float(dt))


def sample_transition(vd: VasicekDiscount, state: OuState, dt: float, rng: np.random.Generator) -> OuState:
    """Draw ``(r_{t+dt}, U_{t+dt})`` from its exact conditional Gaussian law."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    er, cr, sr, eu, cu, ku, su = transition_coefficients(vd, dt)
    z1, z2 = rng.standard_normal(2)
    r_new = er * state.r + cr + sr * z1
    U_new = state.U + eu * state.r + cu + ku * z1 + su * z2
    return OuState(r_new, U_new, state.t + dt)


def value_upper_bound(vd: VasicekDiscount, M: float, r):
    """``M exp(-min((r - b)/a, 0)) / b``, an upper bound for every strategy's value."""
    r = np.asarray(r, dtype=float)
    return M * np.exp(-np.minimum((r - vd.b) / vd.a, 0.0)) / vd.b


def perpetual_payout(vd: VasicekDiscount, M: float, r: float, tol: float = 1e-10) -> float:
    """``M int_0^inf exp(f(r, s)) ds``: dividends at rate ``M`` forever, never ruined.

    Integrates on ``[0, T]`` where ``T`` is chosen so the analytic tail bound
    ``exp(-min((r-b)/a, 0)) exp(-b T) / b`` is below ``tol/2``.
    """
    vd = validate_vasicek(vd)
    if M == 0:
        return 0.0
    lead = -min((r - vd.b) / vd.a, 0.0)
    T = (lead + math.log(2.0 * M / (vd.b * tol))) / vd.b
    T = max(T, 1.0 / vd.b)

    def integrand(s):
        return math.exp(float(log_discount_expectation(vd, r, s)))

    # break points keep the adaptive rule from skipping the early curvature
    edges = [0.0]
    edge = min(1.0 / vd.a, T / 4.0)
    while edge < T:
        edges.append(edge)
        edge *= 4.0
    edges.append(T)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=tol / (4.0 * M * len(edges)), epsrel=1e-13, limit=200)
        total += val
    return M * total
