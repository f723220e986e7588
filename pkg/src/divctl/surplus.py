"""Monte Carlo engine for the controlled compound Poisson surplus.

Paths are event driven: inter-claim times are drawn directly and the surplus
moves linearly between claims, with threshold crossings located exactly.
The discounted dividend integral is accumulated by the trapezoid rule on the
global ``dt`` grid, refined with the crossing and claim instants; the
discount process is sampled exactly (Gaussian increments) on the same knots.

A path is also stopped once the most it could still earn, in expectation, is
below ``tail_tol`` times the model's perpetuity scale (``M/rho`` or ``M/b``):
the remaining value is at most ``D_t * M/rho`` under GBM discounting and
``e^{-U_t} M e^{-min((r_t - b)/a, 0)} / b`` under the Vasicek rate, so the
truncation bias is bounded by that tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange, uint64

from . import _threads
from .ou import _coefficients
from .params import (
    DiscreteMixture,
    Exponential,
    GbmDiscount,
    RiskModel,
    VasicekDiscount,
    validate_gbm,
    validate_risk_model,
    validate_vasicek,
)
from .rng import DISCOUNT_STREAM, RISK_STREAM, _exponential, _normal, _path_seed, _stream_state, _uniform

__all__ = [
    "ThresholdPolicy",
    "PathOutcome",
    "SimEstimate",
    "simulate_path_gbm",
    "simulate_path_vasicek",
    "estimate_value",
    "default_horizon",
]

GBM, VASICEK = 0, 1
RUINED, HORIZON, TAIL_CUT = 0, 1, 2
DEFAULT_TAIL_TOL = 1e-6
HORIZON_TAIL = 1e-4


@dataclass(frozen=True, slots=True)
class ThresholdPolicy:
    """Pay at rate ``M`` when the surplus is at or above the threshold.

    Either a constant threshold ``b`` or a piecewise-linear curve ``b(r)``
    through ``(curve_r[i], curve_b[i])``, held constant beyond the end nodes.
    """

    b: float | None = None
    curve_r: tuple[float, ...] = ()
    curve_b: tuple[float, ...] = ()

    def __post_init__(self):
        if self.b is None:
            if len(self.curve_r) == 0 or len(self.curve_r) != len(self.curve_b):
                raise ValueError("policy needs a constant threshold or a nonempty curve")
            if any(np.diff(self.curve_r) <= 0):
                raise ValueError("curve nodes must be strictly increasing in r")
            if min(self.curve_b) < 0:
                raise ValueError("thresholds must be nonnegative")
        elif not self.b >= 0:
            raise ValueError("threshold b must be nonnegative")

    @classmethod
    def constant(cls, b: float) -> ThresholdPolicy:
        return cls(b=float(b))

    @classmethod
    def from_curve(cls, r, b) -> ThresholdPolicy:
        return cls(curve_r=tuple(float(v) for v in r), curve_b=tuple(float(v) for v in b))

    @property
    def is_constant(self) -> bool:
        return self.b is not None

    def threshold_at(self, r):
        if self.is_constant:
            return np.full(np.shape(r), self.b)
        return np.interp(r, self.curve_r, self.curve_b)

    def _arrays(self):
        if self.is_constant:
            return np.array([0.0]), np.array([self.b])
        return np.array(self.curve_r), np.array(self.curve_b)


@dataclass(frozen=True, slots=True)
class PathOutcome:
    discounted_dividends: float
    ruin_time: float | None
    n_claims: int
    end_time: float
    truncated: bool


@dataclass(frozen=True, slots=True)
class SimEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    horizon: float
    r0: float
    x0: float
    dt: float


@njit(cache=True, inline="always")
def _interp_threshold(pol_r, pol_b, r):
    n = pol_r.shape[0]
    if n == 1 or r <= pol_r[0]:
        return pol_b[0]
    if r >= pol_r[n - 1]:
        return pol_b[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pol_r[mid] <= r:
            lo = mid
        else:
            hi = mid
    w = (r - pol_r[lo]) / (pol_r[hi] - pol_r[lo])
    return pol_b[lo] + w * (pol_b[hi] - pol_b[lo])


@njit(cache=True, inline="always")
def _exp_small(w):
    """``exp(w)``; a degree-9 polynomial (error < 3e-16 relative) when ``|w| <= 1/8``."""
    if abs(w) > 0.125:
        return math.exp(w)
    w2 = w * w
    w4 = w2 * w2
    lo = (1.0 + w) + w2 * (0.5 + w * (1.0 / 6.0))
    mid = (1.0 / 24.0 + w * (1.0 / 120.0)) + w2 * (1.0 / 720.0 + w * (1.0 / 5040.0))
    hi = 1.0 / 40320.0 + w * (1.0 / 362880.0)
    return lo + w4 * (mid + w4 * hi)


@njit(cache=True, inline="always")
def _advance(mode, h, dt, sqdt, emdt, r, U, D, m, delta, a, b_bar, delta_bar, coef, ds, spare):
    """Move the discount state across ``[t, t+h]``; returns ``(r, U, D)``."""
    if mode == GBM:
        if abs(h - dt) <= 1e-12 * dt:
            return r, U, D * emdt * _exp_small(-delta * sqdt * _normal(ds, spare))
        return r, U, D * math.exp(-m * h - delta * math.sqrt(h) * _normal(ds, spare))
    z1 = _normal(ds, spare)
    z2 = _normal(ds, spare)
    if abs(h - dt) <= 1e-12 * dt:
        er, cr, sr, eu, cu, ku, su = coef
    else:
        er, cr, sr, eu, cu, ku, su = _coefficients(a, b_bar, delta_bar, h)
    dU = eu * r + cu + ku * z1 + su * z2
    return er * r + cr + sr * z1, U + dU, D * _exp_small(-dU)


@njit(cache=True, inline="always")
def _tail(mode, D, r, a, b_eff):
    if mode == GBM:
        return D
    return D * math.exp(-min((r - b_eff) / a, 0.0))


@njit(cache=True)
def _simulate(mode, x0, c, lam, claim_kind, beta, atoms, cumw, M,
              r0, m, delta, a, b_bar, delta_bar, b_eff,
              pol_r, pol_b, horizon, dt, tail_tol, seed):
    rs = _stream_state(seed, RISK_STREAM)
    ds = _stream_state(seed, DISCOUNT_STREAM)
    spare = np.zeros(2)
    const_pol = pol_r.shape[0] == 1
    sqdt = math.sqrt(dt)
    if mode == VASICEK:
        coef = _coefficients(a, b_bar, delta_bar, dt)
    else:
        coef = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    t = 0.0
    x = x0
    acc = 0.0
    n_claims = 0
    # discount factor D; the Vasicek model also carries (r, U)
    emdt = math.exp(-m * dt)
    r = r0
    U = 0.0
    D = math.exp(-r0) if mode == GBM else 1.0
    next_claim = t + _exponential(rs) / lam if lam > 0.0 else math.inf
    k_next = 1
    knot = dt

    while True:
        seg_end = min(next_claim, horizon)
        while t < seg_end:
            thr = pol_b[0] if const_pol else _interp_threshold(pol_r, pol_b, r)
            if M > 0.0 and x >= thr and c >= M and const_pol:
                # paying with nonnegative drift: stay on the grid until the claim
                t_start = t
                while t < seg_end:
                    t1 = knot if knot < seg_end else seg_end
                    D0 = D
                    r, U, D = _advance(mode, t1 - t, dt, sqdt, emdt, r, U, D, m, delta, a, b_bar, delta_bar,
                                       coef, ds, spare)
                    acc += 0.5 * (D0 + D) * M * (t1 - t)
                    t = t1
                    if t1 == knot:
                        k_next += 1
                        knot = k_next * dt
                    if _tail(mode, D, r, a, b_eff) <= tail_tol:
                        return acc, -1.0, n_claims, t, TAIL_CUT
                x += (c - M) * (seg_end - t_start)
                break
            land = False
            rate = 0.0
            if M > 0.0 and x >= thr:
                slope = c - M
                rate = M
                t1 = min(seg_end, knot)
                if slope < 0.0:
                    if x > thr:
                        t_hit = t + (x - thr) / (-slope)
                        if t_hit < t1:
                            t1 = t_hit
                            land = True
                    else:
                        # held at the threshold: the feedback pays the premium
                        slope = 0.0
                        rate = c
            else:
                slope = c
                t1 = seg_end
                if not const_pol:
                    t1 = min(t1, knot)
                # with M = 0 the surplus may already sit above the threshold
                if x < thr:
                    t_hit = t + (thr - x) / c
                    if t_hit <= t1:
                        t1 = t_hit
                        land = True
            h = t1 - t
            if h > 0.0:
                D0 = D
                r, U, D = _advance(mode, h, dt, sqdt, emdt, r, U, D, m, delta, a, b_bar, delta_bar,
                                   coef, ds, spare)
                if rate > 0.0:
                    acc += 0.5 * (D0 + D) * rate * h
            x = thr if land else x + slope * h
            t = t1
            while knot <= t:
                k_next += 1
                knot = k_next * dt
            if _tail(mode, D, r, a, b_eff) <= tail_tol:
                return acc, -1.0, n_claims, t, TAIL_CUT
        if t >= horizon:
            return acc, -1.0, n_claims, t, HORIZON
        # claim arrival at t
        if claim_kind == 0:
            y = _exponential(rs) / beta
        else:
            u = _uniform(rs)
            j = 0
            while j < cumw.shape[0] - 1 and u > cumw[j]:
                j += 1
            y = atoms[j]
        n_claims += 1
        x -= y
        if x < 0.0:
            return acc, t, n_claims, t, RUINED
        next_claim = t + _exponential(rs) / lam


def _make_driver(parallel):
    @njit(cache=True, parallel=parallel)
    def run(master_seed, n, mode, x0, c, lam, claim_kind, beta, atoms, cumw, M,
            r0, m, delta, a, b_bar, delta_bar, b_eff, pol_r, pol_b, horizon, dt, tail_tol):
        out = np.empty(n)
        for i in prange(n):
            seed = _path_seed(master_seed, i)
            out[i] = _simulate(mode, x0, c, lam, claim_kind, beta, atoms, cumw, M,
                               r0, m, delta, a, b_bar, delta_bar, b_eff,
                               pol_r, pol_b, horizon, dt, tail_tol, seed)[0]
        return out

    return run


# identical per-path arithmetic; the serial build skips the thread-pool overhead
_run_paths_serial = _make_driver(False)
_run_paths_parallel = _make_driver(True)


def _claim_arrays(rm: RiskModel):
    claims = rm.claims
    if isinstance(claims, Exponential):
        return 0, float(claims.beta), np.zeros(1), np.ones(1)
    if isinstance(claims, DiscreteMixture):
        cumw = np.cumsum(claims.weights)
        cumw[-1] = 1.0
        return 1, 0.0, np.array(claims.atoms), cumw
    raise TypeError(f"unsupported claims {type(claims).__name__}")


def default_horizon(discount, tail: float = HORIZON_TAIL) -> float:
    """Horizon beyond which the expected perpetuity tail is below ``tail`` times its scale."""
    if isinstance(discount, GbmDiscount):
        discount = validate_gbm(discount)
        return max((math.log(1.0 / tail) - discount.r0) / discount.rho, 1.0 / discount.rho)
    discount = validate_vasicek(discount)
    lead = -min((discount.r0 - discount.b) / discount.a, 0.0)
    return max((math.log(1.0 / tail) + lead) / discount.b, 1.0 / discount.b)


def _kernel_args(rm, discount, policy: ThresholdPolicy, x0, horizon, dt, tail_tol):
    rm = validate_risk_model(rm)
    if not x0 >= 0:
        raise ValueError("x0 must be nonnegative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    explicit_horizon = horizon is not None
    if horizon is None:
        horizon = default_horizon(discount)
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError("horizon must be positive and finite")
    kind, beta, atoms, cumw = _claim_arrays(rm)
    pol_r, pol_b = policy._arrays()
    if isinstance(discount, GbmDiscount):
        if explicit_horizon and discount.delta >= 0 and not discount.rho > 0:
            # a finite horizon keeps the integral finite without a positive rho
            gd = discount
        else:
            gd = validate_gbm(discount)
        if not policy.is_constant:
            raise ValueError("rate-dependent threshold curves apply to the Vasicek model only")
        disc = (GBM, gd.r0, gd.m, gd.delta, 1.0, 0.0, 0.0, 0.0)
    elif isinstance(discount, VasicekDiscount):
        vd = validate_vasicek(discount)
        disc = (VASICEK, vd.r0, 0.0, 0.0, vd.a, vd.b_bar, vd.delta_bar, vd.b)
    else:
        raise TypeError(f"unsupported discount model {type(discount).__name__}")
    mode, r0, m, delta, a, b_bar, delta_bar, b_eff = disc
    head = (mode, float(x0), float(rm.c), float(rm.lam), kind, beta, atoms, cumw, float(rm.M))
    tail = (r0, m, delta, a, b_bar, delta_bar, b_eff, pol_r, pol_b, float(horizon), float(dt), float(tail_tol))
    return head, tail


def _outcome(res) -> PathOutcome:
    acc, ruin, n_claims, end, status = res
    return PathOutcome(float(acc), None if status != RUINED else float(ruin), int(n_claims), float(end),
                       status == TAIL_CUT)


def simulate_path_gbm(rm: RiskModel, gd: GbmDiscount, policy: ThresholdPolicy, x0: float,
                      horizon: float, dt: float, seed: int, tail_tol: float = DEFAULT_TAIL_TOL) -> PathOutcome:
    if not isinstance(gd, GbmDiscount):
        raise TypeError("simulate_path_gbm needs a GbmDiscount")
    head, tail = _kernel_args(rm, gd, policy, x0, horizon, dt, tail_tol)
    return _outcome(_simulate(*head, *tail, uint64(seed & 0xFFFFFFFFFFFFFFFF)))


def simulate_path_vasicek(rm: RiskModel, vd: VasicekDiscount, policy: ThresholdPolicy, x0: float,
                          horizon: float, dt: float, seed: int, tail_tol: float = DEFAULT_TAIL_TOL) -> PathOutcome:
    if not isinstance(vd, VasicekDiscount):
        raise TypeError("simulate_path_vasicek needs a VasicekDiscount")
    head, tail = _kernel_args(rm, vd, policy, x0, horizon, dt, tail_tol)
    return _outcome(_simulate(*head, *tail, uint64(seed & 0xFFFFFFFFFFFFFFFF)))


def path_values(rm: RiskModel, discount, policy: ThresholdPolicy, x0: float, n_paths: int,
                horizon: float | None = None, dt: float = 0.01, master_seed: int = 0,
                tail_tol: float = DEFAULT_TAIL_TOL) -> np.ndarray:
    """Per-path discounted dividends, indexed by path number."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    workers = _threads.apply()
    head, tail = _kernel_args(rm, discount, policy, x0, horizon, dt, tail_tol)
    run = _run_paths_parallel if workers > 1 else _run_paths_serial
    return run(uint64(master_seed & 0xFFFFFFFFFFFFFFFF), int(n_paths), *head, *tail)


def estimate_value(rm: RiskModel, discount, policy: ThresholdPolicy, x0: float, n_paths: int,
                   horizon: float | None = None, dt: float = 0.01, master_seed: int = 0,
                   tail_tol: float = DEFAULT_TAIL_TOL) -> SimEstimate:
    """Mean and standard error of the discounted dividends over ``n_paths`` i.i.d. paths."""
    if n_paths < 2:
        raise ValueError(f"n_paths must be at least 2 (got {n_paths})")
    if horizon is None:
        horizon = default_horizon(discount)
    vals = path_values(rm, discount, policy, x0, n_paths, horizon, dt, master_seed, tail_tol)
    # np.sum reduces pairwise over the index-ordered array: independent of worker count
    mean = float(np.sum(vals) / n_paths)
    var = float(np.sum((vals - mean) ** 2) / (n_paths - 1))
    return SimEstimate(mean, math.sqrt(var / n_paths), int(n_paths), int(master_seed), float(horizon),
                       float(discount.r0), float(x0), float(dt))
