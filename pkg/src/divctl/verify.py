"""Checks that bind each solver to an independent oracle.

Every check returns a :class:`CheckReport` whose ``passed`` flag is
``metric <= tolerance``.  Negative controls (deliberately broken inputs) are
ordinary reports with ``expected=False``: the suite is healthy when every
report's ``passed`` equals its ``expected``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize

from .gbm import (
    Case,
    GbmSolution,
    assemble,
    build_solution,
    eval_F,
    eval_F_prime,
    eval_value,
)
from .ou import joint_moments, log_discount_expectation, transition_coefficients, value_upper_bound
from .params import Exponential, GbmDiscount, RiskModel, VasicekDiscount, validate_vasicek
from .pide import Domain, ValueField, build_grid, extract_threshold_curve, solve
from .surplus import SimEstimate, ThresholdPolicy, estimate_value

__all__ = [
    "CheckReport",
    "integro_ode_residual",
    "smooth_fit_residuals",
    "threshold_by_root_finding",
    "mc_vs_closed_form",
    "pide_vs_constant_rate",
    "f_identity_check",
    "discount_bridge_check",
    "vasicek_mc_bound_check",
    "pide_bound_check",
    "default_suite",
    "P1",
    "P2",
]

# reference parameter sets: shared risk model, two GBM discount rates
P1_RISK = RiskModel(c=2.0, lam=1.0, claims=Exponential(1.0), M=1.0)
P1 = (P1_RISK, GbmDiscount(r0=0.0, m=0.05, delta=0.2))
P2 = (P1_RISK, GbmDiscount(r0=0.0, m=0.52, delta=0.2))


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    metric: float
    tolerance: float
    details: list[dict] = field(default_factory=list)
    expected: bool = True
    # wall-clock cost; informational only, never serialized
    seconds: float = 0.0

    @property
    def as_expected(self) -> bool:
        return self.passed == self.expected


def _report(name, metric, tolerance, details, expected=True) -> CheckReport:
    metric = float(metric)
    return CheckReport(name, bool(metric <= tolerance), metric, float(tolerance), details, expected)


# --- closed form under GBM discounting --------------------------------------


def _convolution(sol: GbmSolution, x: float) -> float:
    """``int_0^x F(x - y) beta e^{-beta y} dy`` by adaptive quadrature, split at ``b*``."""
    beta = sol.beta

    def integrand(u):
        return float(eval_F(sol, u)) * beta * math.exp(-beta * (x - u))

    if x <= 0.0:
        return 0.0
    pieces = [0.0, x]
    if sol.case is Case.B and 0.0 < sol.b_star < x:
        pieces = [0.0, sol.b_star, x]
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-10, epsrel=1e-13, limit=200)
        total += val
    return total


def integro_ode_residual(sol: GbmSolution, x_grid) -> CheckReport:
    """``(-rho - lam) F + c F' + lam (F * G)(x) + max_{0<=l<=M} l (1 - F')`` on ``x_grid``."""
    rm = sol.risk
    xs = np.asarray(x_grid, dtype=float)
    F = eval_F(sol, xs)
    Fp = eval_F_prime(sol, xs)
    rows = []
    worst = 0.0
    for x, f, fp in zip(xs, F, Fp):
        conv = _convolution(sol, float(x))
        res = (-sol.rho - rm.lam) * f + rm.c * fp + rm.lam * conv + rm.M * max(1.0 - fp, 0.0)
        worst = max(worst, abs(res))
        rows.append({"x": float(x), "F": float(f), "residual": float(res)})
    return _report("integro_ode_residual", worst, 1e-8, rows)


def _smooth_fit_terms(sol: GbmSolution, b: float, gamma: float, D: float) -> tuple[float, ...]:
    R1, R2, S2 = sol.roots.R1, sol.roots.R2, sol.roots.S2
    beta, M, rho = sol.beta, sol.M, sol.rho
    e1, e2, es = math.exp(R1 * b), math.exp(R2 * b), math.exp(S2 * b)
    continuity = gamma * ((R1 + beta) * e1 - (R2 + beta) * e2) - M / rho - D * es
    claim_balance = gamma * (e1 - e2) - M / (beta * rho) - D * es / (beta + S2)
    inner_slope = gamma * (R1 * (R1 + beta) * e1 - R2 * (R2 + beta) * e2) - 1.0
    outer_slope = S2 * D * es - 1.0
    return continuity, claim_balance, inner_slope, outer_slope


def smooth_fit_residuals(sol: GbmSolution) -> CheckReport:
    """Continuity, claim balance and unit slope on both sides of ``b*`` for case B."""
    if sol.case is not Case.B:
        raise ValueError("smooth fit applies to case B only")
    terms = _smooth_fit_terms(sol, sol.b_star, sol.gamma, sol.D)
    names = ("continuity", "claim_balance", "inner_slope", "outer_slope")
    rows = [{"equation": n, "residual": float(t)} for n, t in zip(names, terms)]
    return _report("smooth_fit_residuals", max(abs(t) for t in terms), 1e-10, rows)


def threshold_by_root_finding(sol: GbmSolution) -> float:
    """``b*`` without the closed-form threshold.

    For each trial ``b`` the continuity and claim-balance equations are
    linear in ``(gamma, D)``; the inner slope at ``b`` minus one is then a
    scalar function of ``b`` whose sign change is located by Brent's method.
    """
    R1, R2, S2 = sol.roots.R1, sol.roots.R2, sol.roots.S2
    beta, M, rho = sol.beta, sol.M, sol.rho

    def slope_gap(b):
        e1, e2, es = math.exp(R1 * b), math.exp(R2 * b), math.exp(S2 * b)
        A = np.array([[(R1 + beta) * e1 - (R2 + beta) * e2, -es], [e1 - e2, -es / (beta + S2)]])
        gamma, D = np.linalg.solve(A, np.array([M / rho, M / (beta * rho)]))
        return gamma * (R1 * (R1 + beta) * e1 - R2 * (R2 + beta) * e2) - 1.0

    span = 50.0 / min(R1, -R2, -S2)
    grid = np.geomspace(1e-6, span, 400)
    vals = [slope_gap(b) for b in grid]
    for lo, hi, flo, fhi in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if flo == 0.0:
            return float(lo)
        if flo * fhi < 0.0:
            return float(optimize.brentq(slope_gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))
    raise ArithmeticError("no sign change of the slope gap on the search grid")


def perturbed_threshold(sol: GbmSolution, shift: float) -> GbmSolution:
    """Same roots with ``b*`` moved by ``shift`` and ``gamma``, ``D`` rebuilt from it."""
    return assemble(sol.risk, sol.discount, sol.roots, Case.B, sol.kappa, sol.b_star + shift)


def mc_vs_closed_form(rm: RiskModel, gd: GbmDiscount, points, n_paths: int = 100_000, seed: int = 1,
                      horizon: float = 2000.0, dt: float = 0.01, value_scale: float = 1.0,
                      estimates: list[SimEstimate] | None = None) -> CheckReport:
    """Largest ``|MC mean - scale * V(r, x)| / stderr`` over ``points``.

    Point ``k`` uses master seed ``seed + k``.  Passing ``estimates`` from an
    earlier report reuses them (e.g. for the scaled negative control).
    """
    sol = build_solution(rm, gd)
    policy = ThresholdPolicy.constant(sol.b_star)
    rows = []
    worst = 0.0
    for k, (r, x) in enumerate(points):
        if estimates is None:
            est = estimate_value(rm, replace(gd, r0=float(r)), policy, float(x), n_paths, horizon, dt, seed + k)
        else:
            est = estimates[k]
        exact = value_scale * float(eval_value(sol, r, x))
        z = abs(est.mean - exact) / est.stderr if est.stderr > 0 else (0.0 if est.mean == exact else math.inf)
        worst = max(worst, z)
        rows.append({"r": float(r), "x": float(x), "mean": est.mean, "stderr": est.stderr, "exact": exact,
                     "z": z, "rel_stderr": est.stderr / abs(est.mean) if est.mean else math.inf,
                     "estimate": est})
    return _report("mc_vs_closed_form", worst, 3.0, rows)


def pide_vs_constant_rate(rm: RiskModel, rho0: float, domain: Domain = Domain(40.0, 2001, 9),
                          tol: float = 1e-8, max_iter: int = 2_000_000, a: float = 1.0) -> CheckReport:
    """PIDE with a frozen rate ``r = b_bar = rho0`` against the closed form with ``m = rho0``, ``delta = 0``.

    The metric combines the two acceptance targets so that one number
    carries both: ``max(max_rel_err / 0.01, |threshold error| / (2 h_x))``.
    """
    if domain.n_r % 2 == 0:
        raise ValueError("n_r must be odd so that a row sits at b_bar")
    vd = VasicekDiscount(r0=rho0, a=a, b_bar=rho0, delta_bar=0.0)
    grid = build_grid(vd, rm, domain)
    fld = solve(grid, rm, vd, tol=tol, max_iter=max_iter)
    sol = build_solution(rm, GbmDiscount(r0=0.0, m=rho0, delta=0.0))
    i = domain.n_r // 2
    exact = eval_F(sol, grid.x_nodes)
    rel = float(np.max(np.abs(fld.V[i] - exact) / exact))
    curve = extract_threshold_curve(fld)
    thr_err = abs(float(curve.b_star[i]) - sol.b_star)
    metric = max(rel / 0.01, thr_err / (2.0 * grid.h_x))
    rows = [{"max_rel_err": rel, "threshold_pide": float(curve.b_star[i]), "threshold_exact": sol.b_star,
             "threshold_err": thr_err, "h_x": grid.h_x, "iterations": fld.iterations,
             "residual_norm": fld.residual_norm, "field": fld}]
    return _report("pide_vs_constant_rate", metric, 1.0, rows)


# --- Vasicek analytics -------------------------------------------------------


def _f_sigma_one(vd: VasicekDiscount, r: float, s: float) -> float:
    # unreduced form with its unnamed constant set to one (valid only when a == 1)
    a, bb, d = vd.a, vd.b_bar, vd.delta_bar
    e = math.exp(-a * s)
    return -bb * s + d * d / 2.0 * s - (r - bb) / a * (1.0 - e) + d * d / (4.0 * a**3) * (1.0 - (2.0 - e) ** 2)


def f_identity_check(samples, formula: str = "reduced") -> CheckReport:
    """Relative gap between ``f(r, s)`` and ``-E[U_s] + Var[U_s]/2`` over ``(vd, r, s)`` samples."""
    if formula not in ("reduced", "sigma_one"):
        raise ValueError("formula must be 'reduced' or 'sigma_one'")
    rows = []
    worst = 0.0
    for vd, r, s in samples:
        mom = joint_moments(vd, r, s)
        ref = -mom.mean_U + 0.5 * mom.var_U
        f = float(log_discount_expectation(vd, r, s)) if formula == "reduced" else _f_sigma_one(vd, r, s)
        gap = abs(f - ref) / max(1.0, abs(f))
        worst = max(worst, gap)
        rows.append({"a": vd.a, "b_bar": vd.b_bar, "delta_bar": vd.delta_bar, "r": float(r), "s": float(s),
                     "f": f, "reference": ref, "gap": gap})
    name = "f_identity" if formula == "reduced" else "f_identity_sigma_one"
    return _report(name, worst, 1e-12, rows, expected=formula == "reduced")


def random_f_samples(n: int = 1000, seed: int = 7):
    """Random ``(vd, r, s)`` with ``a`` in ``[0.1, 5]`` and ``b > 0``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        a = rng.uniform(0.1, 5.0)
        d = rng.uniform(0.0, 0.3)
        bb = d * d / (2 * a * a) + rng.uniform(0.005, 0.2)
        out.append((VasicekDiscount(0.0, a, bb, d), rng.uniform(-0.2, 0.4), rng.uniform(0.0, 50.0)))
    return out


def _discount_samples(vd: VasicekDiscount, r: float, s: float, n: int, steps: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    er, cr, sr, eu, cu, ku, su = transition_coefficients(vd, s / steps)
    rr = np.full(n, float(r))
    U = np.zeros(n)
    for _ in range(steps):
        z = rng.standard_normal((2, n))
        U = U + eu * rr + cu + ku * z[0] + su * z[1]
        rr = er * rr + cr + sr * z[0]
    return np.exp(-U)


def discount_bridge_check(vd: VasicekDiscount, points, n: int = 100_000, steps: int = 4,
                          seed: int = 11) -> CheckReport:
    """Sample mean of ``exp(-U_s)`` from chained exact transitions against ``exp(f(r, s))``."""
    vd = validate_vasicek(vd)
    rows = []
    worst = 0.0
    for k, (r, s) in enumerate(points):
        v = _discount_samples(vd, r, s, n, steps, seed + k)
        mean = float(np.mean(v))
        se = float(np.std(v, ddof=1) / math.sqrt(n))
        exact = math.exp(float(log_discount_expectation(vd, r, s)))
        z = abs(mean - exact) / se
        worst = max(worst, z)
        rows.append({"r": float(r), "s": float(s), "mean": mean, "stderr": se, "exact": exact, "z": z})
    return _report("discount_bridge", worst, 4.0, rows)


def vasicek_mc_bound_check(rm: RiskModel, vd: VasicekDiscount, policy: ThresholdPolicy, points,
                           n_paths: int = 20_000, seed: int = 3, dt: float = 0.01) -> CheckReport:
    """Largest ``(MC mean - upper bound) / stderr`` over ``(r0, x0)`` points; tolerance 3."""
    rows = []
    worst = -math.inf
    for k, (r, x) in enumerate(points):
        v = replace(vd, r0=float(r))
        est = estimate_value(rm, v, policy, float(x), n_paths, None, dt, seed + k)
        ub = float(value_upper_bound(v, rm.M, r))
        z = (est.mean - ub) / est.stderr if est.stderr > 0 else (0.0 if est.mean <= ub else math.inf)
        worst = max(worst, z)
        rows.append({"r": float(r), "x": float(x), "mean": est.mean, "stderr": est.stderr, "bound": ub, "z": z,
                     "estimate": est})
    return _report("vasicek_mc_bound", worst, 3.0, rows)


def pide_bound_check(fld: ValueField, vd: VasicekDiscount) -> CheckReport:
    """Largest ``V - upper bound`` over all nodes; tolerance 0."""
    ub = value_upper_bound(vd, fld.M, fld.grid.r_nodes)[:, None]
    excess = fld.V - ub
    i, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
    rows = [{"r": float(fld.grid.r_nodes[i]), "x": float(fld.grid.x_nodes[j]), "V": float(fld.V[i, j]),
             "bound": float(ub[i, 0])}]
    return _report("pide_bound", float(excess.max()), 0.0, rows)


# --- default suite -----------------------------------------------------------


def _timed(name: str, check, *args, expected: bool = True, **kwargs) -> CheckReport:
    t0 = time.perf_counter()
    rep = check(*args, **kwargs)
    return replace(rep, name=name, expected=expected, seconds=time.perf_counter() - t0)


def default_suite(n_paths: int = 100_000, n_x: int = 2001, n_r: int = 9, dt: float = 0.01, seed: int = 1,
                  tol: float = 1e-8, max_iter: int = 2_000_000) -> list[CheckReport]:
    """The four oracle checks at reference parameters, each with its negative control."""
    reports = []
    sols = {name: build_solution(*params) for name, params in (("P1", P1), ("P2", P2))}
    for name, sol in sols.items():
        xmax = 3.0 * sol.b_star if sol.case is Case.B else 20.0
        reports.append(_timed(f"integro_ode_residual[{name}]", integro_ode_residual, sol,
                              np.linspace(0.0, xmax, 200)))
    bad = perturbed_threshold(sols["P1"], 0.1)
    reports.append(_timed("integro_ode_residual[P1,b*+0.1]", integro_ode_residual, bad,
                          np.linspace(0.0, 3.0 * sols["P1"].b_star, 200), expected=False))
    reports.append(_timed("smooth_fit_residuals[P1]", smooth_fit_residuals, sols["P1"]))

    b1 = sols["P1"].b_star
    mc_points = {"P1": [(0.0, b1), (0.0, b1 / 2.0), (0.0, 2.0 * b1)], "P2": [(0.0, 0.0), (0.0, 2.0), (0.0, 5.0)]}
    for name, params in (("P1", P1), ("P2", P2)):
        rep = _timed(f"mc_vs_closed_form[{name}]", mc_vs_closed_form, *params, mc_points[name], n_paths, seed,
                     dt=dt)
        reports.append(rep)
        if name == "P1":
            ests = [row["estimate"] for row in rep.details]
            reports.append(_timed("mc_vs_closed_form[P1,x1.05]", mc_vs_closed_form, *params, mc_points[name],
                                  n_paths, seed, dt=dt, value_scale=1.05, estimates=ests, expected=False))

    dom = Domain(40.0, n_x, n_r)
    for name, rho0 in (("P1", 0.03), ("P2", 0.5)):
        reports.append(_timed(f"pide_vs_constant_rate[{name}]", pide_vs_constant_rate, P1_RISK, rho0, dom,
                              tol=tol, max_iter=max_iter))

    samples = random_f_samples()
    reports.append(_timed("f_identity", f_identity_check, samples))
    reports.append(_timed("f_identity_sigma_one", f_identity_check, samples, formula="sigma_one",
                          expected=False))
    return reports
