"""Explicit optimal dividend solution under geometric Brownian motion discounting.

With exponential claims and discount ``exp(-r - m t - delta B_t)`` the value
function factorises as ``V(r, x) = exp(-r) F(x)`` where ``F`` solves a
constant-coefficient integro-ODE.  Writing ``rho = m - delta**2/2``:

* ``R1 > 0 > R2`` are the roots of ``c xi^2 + (beta c - lam - rho) xi - beta rho``,
* ``S2 < 0`` is the negative root of the same polynomial with ``c`` replaced by
  ``c - M``.

If ``kappa = (-S2) (M/rho) (1 + S2/beta) <= 1`` the optimal strategy pays at
rate ``M`` from zero surplus (case A); otherwise it pays ``M`` only above the
threshold ``b* = log((R2^2 - S2 R2) / (R1^2 - S2 R1)) / (R1 - R2)`` (case B).

In both cases the outer branch is written ``F(x) = M/rho + D exp(S2 x)``.  The
inner branch of case B is ``gamma * ((beta+R1) e^{R1 x} - (beta+R2) e^{R2 x})``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .params import Exponential, GbmDiscount, ParameterError, RiskModel, validate_gbm, validate_risk_model

__all__ = [
    "Case",
    "ModelInconsistency",
    "CharRoots",
    "GbmSolution",
    "solve_characteristic",
    "char_poly",
    "classify_case",
    "threshold",
    "build_solution",
    "assemble",
    "eval_F",
    "eval_value",
    "eval_F_prime",
    "eval_F_second",
    "optimal_rate",
]


class Case(str, enum.Enum):
    A = "A"
    B = "B"


class ModelInconsistency(ArithmeticError):
    """Inputs admit no solution of the assumed concave threshold form."""


@dataclass(frozen=True, slots=True)
class CharRoots:
    R1: float
    R2: float
    S1: float
    S2: float


@dataclass(frozen=True, slots=True)
class GbmSolution:
    case: Case
    kappa: float
    roots: CharRoots
    b_star: float
    gamma: float | None
    D: float
    risk: RiskModel
    discount: GbmDiscount

    @property
    def rho(self) -> float:
        return self.discount.rho

    @property
    def beta(self) -> float:
        return self.risk.claims.beta

    @property
    def M(self) -> float:
        return self.risk.M


def char_poly(c_eff, beta, lam, rho, xi):
    """``c_eff xi^2 + (beta c_eff - lam - rho) xi - beta rho``."""
    return c_eff * xi * xi + (beta * c_eff - lam - rho) * xi - beta * rho


def solve_characteristic(c_eff: float, beta: float, lam: float, rho: float) -> tuple[float, float]:
    """Return ``(xi_plus, xi_minus)`` of the characteristic quadratic.

    The larger-magnitude root comes from the quadratic formula with the sign
    chosen to avoid cancellation; the other from the product of the roots.
    """
    if not (c_eff > 0 and beta > 0 and rho > 0 and lam >= 0):
        raise ValueError(
            f"characteristic equation needs c_eff>0, beta>0, rho>0, lam>=0 "
            f"(got c_eff={c_eff}, beta={beta}, lam={lam}, rho={rho})"
        )
    A = c_eff
    B = beta * c_eff - lam - rho
    C = -beta * rho
    q = -0.5 * (B + math.copysign(math.sqrt(B * B - 4.0 * A * C), B))
    x1 = q / A
    x2 = C / q
    return (x1, x2) if x1 > x2 else (x2, x1)


def classify_case(S2: float, M: float, rho: float, beta: float) -> tuple[Case, float]:
    if not (S2 < 0 and M > 0 and rho > 0):
        raise ValueError(f"classify_case needs S2<0, M>0, rho>0 (got S2={S2}, M={M}, rho={rho})")
    if not beta + S2 > 0:
        raise ModelInconsistency(f"beta + S2 = {beta + S2!r} is not positive; outer branch would not be concave")
    kappa = (-S2) * (M / rho) * (1.0 + S2 / beta)
    return (Case.A if kappa <= 1.0 else Case.B), kappa


def threshold(R1: float, R2: float, S2: float) -> float:
    arg = (R2 * R2 - S2 * R2) / (R1 * R1 - S2 * R1)
    if not arg > 0:
        raise ModelInconsistency(f"threshold log argument {arg!r} is not positive")
    return math.log(arg) / (R1 - R2)


def assemble(risk: RiskModel, discount: GbmDiscount, roots: CharRoots, case: Case, kappa: float,
             b_star: float) -> GbmSolution:
    """Build a solution record from its threshold; ``gamma`` and ``D`` follow from ``b_star``."""
    M, rho, beta = risk.M, discount.rho, risk.claims.beta
    R1, R2, S2 = roots.R1, roots.R2, roots.S2
    if case is Case.A:
        gamma = None
        D = -(M / rho) * (1.0 + S2 / beta)
    else:
        denom = (R1 - S2) * math.exp(R1 * b_star) - (R2 - S2) * math.exp(R2 * b_star)
        gamma = -(S2 / beta) * (M / rho) / denom
        D = math.exp(-S2 * b_star) / S2
    return GbmSolution(case, kappa, roots, b_star, gamma, D, risk, discount)


def build_solution(rm: RiskModel, gd: GbmDiscount) -> GbmSolution:
    rm = validate_risk_model(rm)
    gd = validate_gbm(gd)
    if not isinstance(rm.claims, Exponential):
        raise ParameterError("claims", "closed form requires exponential claims")
    if not 0 < rm.M < rm.c:
        raise ParameterError("M", f"closed form requires 0 < M < c (M={rm.M}, c={rm.c})")
    beta, rho = rm.claims.beta, gd.rho
    R1, R2 = solve_characteristic(rm.c, beta, rm.lam, rho)
    S1, S2 = solve_characteristic(rm.c - rm.M, beta, rm.lam, rho)
    roots = CharRoots(R1, R2, S1, S2)
    case, kappa = classify_case(S2, rm.M, rho, beta)
    b_star = 0.0 if case is Case.A else threshold(R1, R2, S2)
    return assemble(rm, gd, roots, case, kappa, b_star)


def _branches(sol: GbmSolution, x):
    x = np.asarray(x, dtype=float)
    inner = (x < sol.b_star) if sol.case is Case.B else np.zeros(x.shape, dtype=bool)
    return x, inner


def eval_F(sol: GbmSolution, x):
    x, inner = _branches(sol, x)
    r = sol.roots
    outer = sol.M / sol.rho + sol.D * np.exp(r.S2 * x)
    if sol.case is Case.A:
        return outer
    xi = np.where(inner, x, 0.0)
    f1 = sol.gamma * ((sol.beta + r.R1) * np.exp(r.R1 * xi) - (sol.beta + r.R2) * np.exp(r.R2 * xi))
    return np.where(inner, f1, outer)


def eval_value(sol: GbmSolution, r, x):
    """``V(r, x) = exp(-r) F(x)``."""
    return np.exp(-np.asarray(r, dtype=float)) * eval_F(sol, x)


def _derivative(sol: GbmSolution, x, order: int):
    x, inner = _branches(sol, x)
    rt = sol.roots
    outer = sol.D * rt.S2**order * np.exp(rt.S2 * x)
    if sol.case is Case.A:
        return outer
    xi = np.where(inner, x, 0.0)
    f1 = sol.gamma * (
        rt.R1**order * (sol.beta + rt.R1) * np.exp(rt.R1 * xi)
        - rt.R2**order * (sol.beta + rt.R2) * np.exp(rt.R2 * xi)
    )
    return np.where(inner, f1, outer)


def eval_F_prime(sol: GbmSolution, x):
    return _derivative(sol, x, 1)


def eval_F_second(sol: GbmSolution, x):
    return _derivative(sol, x, 2)


def optimal_rate(sol: GbmSolution, x):
    """Dividend rate of the optimal threshold strategy: ``M`` iff ``x >= b*``."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= sol.b_star, sol.M, 0.0)
