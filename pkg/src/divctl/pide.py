"""Monotone finite-difference solver for the Vasicek dividend HJB integro-PDE.

Unknown ``V(r, x)`` on a uniform ``(r, x)`` grid.  At each node and for each
rate ``l`` in ``{0, M}`` the discrete operator is

    H_l = A_l - d_l V_ij
    A_l = (transport neighbour) + (rate neighbours) + lam * J_ij + l
    d_l = r_i + lam + (transport and rate coefficients)

with the transport term ``(c - l) V_x`` upwinded by the sign of its
coefficient, ``delta_bar**2/2 V_rr`` centred in the interior, and the drift
``a (b_bar - r) V_r`` centred where the diffusion weight keeps the stencil
monotone and upwinded elsewhere.  On the two edge rows the drift points
inward and is upwinded, with no second-difference term.  ``J`` is the
jump integral of the piecewise-linear interpolant of ``V`` in ``x``: exact
exponential weights per cell for exponential claims (a recursion in ``x``
with total weight exactly ``1 - exp(-beta x)``), interpolated values at
``x - y_k`` for a discrete mixture, and zero for claims larger than the
surplus.  The last column carries a Dirichlet far-field value, the
never-ruined perpetuity.

The fixed point of ``max_l H_l = 0`` is reached by pseudo-time iteration
``V <- V + omega * max_l H_l / max_l d_l``.  All coefficients of ``A_l`` are
nonnegative and the local step never exceeds ``1/d_l``, so one sweep is a
monotone map.  The sweep is Jacobi style (it reads only the previous
iterate), so rows can be processed in parallel without changing the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy import linalg

from . import _threads
from .ou import perpetual_payout, value_upper_bound
from .params import (
    DiscreteMixture,
    Exponential,
    RiskModel,
    VasicekDiscount,
    validate_risk_model,
    validate_vasicek,
)

__all__ = [
    "Domain",
    "Grid2D",
    "ValueField",
    "ThresholdCurve",
    "RefinementReport",
    "ConvergenceError",
    "SchemeError",
    "build_grid",
    "solve",
    "far_field",
    "discrete_perpetuity",
    "hjb_residual",
    "diagonal_coefficient",
    "extract_threshold_curve",
    "refine_and_compare",
    "r_lipschitz",
    "lipschitz_bound",
    "default_x_max",
]

MIN_NODES = 8
_OK, _NOT_CONVERGED, _NONMONOTONE = 0, 1, 2


class ConvergenceError(RuntimeError):
    """The iteration hit ``max_iter``; ``history`` holds the sampled residual norms."""

    def __init__(self, message: str, history: np.ndarray, field: ValueField):
        super().__init__(message)
        self.history = history
        self.field = field


class SchemeError(RuntimeError):
    """A diagonal coefficient became nonpositive, so the step controller cannot stay monotone."""


@dataclass(frozen=True, slots=True)
class Domain:
    """Grid request.

    The rate axis spans ``b_bar`` plus or minus
    ``r_halfwidth_in_stationary_sds`` stationary standard deviations; when
    the rate has no volatility that width is zero and ``min_halfwidth`` is
    used instead.
    """

    x_max: float = 40.0
    n_x: int = 2001
    n_r: int = 17
    r_halfwidth_in_stationary_sds: float = 4.0
    min_halfwidth: float = 0.02


@dataclass(frozen=True, eq=False)
class Grid2D:
    r_nodes: np.ndarray
    x_nodes: np.ndarray

    @property
    def n_r(self) -> int:
        return self.r_nodes.shape[0]

    @property
    def n_x(self) -> int:
        return self.x_nodes.shape[0]

    @property
    def h_r(self) -> float:
        return float(self.r_nodes[1] - self.r_nodes[0])

    @property
    def h_x(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.x_nodes[-1])


@dataclass(frozen=True, eq=False)
class ValueField:
    """Converged iterate with its bang-bang policy (rates ``0`` or ``M``) per node.

    ``residual_norm`` is ``max |H| / (1 + |V|)`` over the non-Dirichlet
    nodes, evaluated at the returned ``V``; ``history`` samples it at the
    sweeps listed in ``history_iterations``.
    """

    V: np.ndarray
    policy: np.ndarray
    residual_norm: float
    iterations: int
    grid: Grid2D
    boundary: np.ndarray
    M: float
    history: np.ndarray = field(default_factory=lambda: np.empty(0))
    history_iterations: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


@dataclass(frozen=True, eq=False)
class ThresholdCurve:
    """Per-row switching surplus; ``resolved`` is False where no switch was found.

    This is a summary of the computed policy.  Nothing guarantees the
    optimal Vasicek strategy has threshold form.
    """

    r: np.ndarray
    b_star: np.ndarray
    resolved: np.ndarray


@dataclass(frozen=True, eq=False)
class RefinementReport:
    fields: tuple[ValueField, ...]
    differences: np.ndarray
    ratios: np.ndarray

    @property
    def monotone(self) -> bool:
        d = self.differences
        return bool(np.all(d[1:] < d[:-1]) or np.all(d == 0.0))


def build_grid(vd: VasicekDiscount, rm: RiskModel, domain: Domain = Domain()) -> Grid2D:
    """Uniform grid on ``[b_bar - w, b_bar + w] x [0, x_max]``.

    With an odd ``n_r`` the middle row sits exactly at ``b_bar``, so mean
    reversion points inward on both edge rows.
    """
    vd = validate_vasicek(vd)
    validate_risk_model(rm)
    n_r, n_x = int(domain.n_r), int(domain.n_x)
    if n_r < MIN_NODES or n_x < MIN_NODES:
        raise ValueError(f"grid needs at least {MIN_NODES} nodes per axis (n_r={n_r}, n_x={n_x})")
    if not domain.x_max > 0:
        raise ValueError("x_max must be positive")
    k = domain.r_halfwidth_in_stationary_sds
    if not k > 0:
        raise ValueError("degenerate r-range")
    width = k * vd.sigma_tilde
    if width == 0.0:
        width = domain.min_halfwidth
    if not width > 0:
        raise ValueError("degenerate r-range")
    r = np.linspace(vd.b_bar - width, vd.b_bar + width, n_r)
    if n_r % 2:
        r[n_r // 2] = vd.b_bar
    x = np.linspace(0.0, domain.x_max, n_x)
    return Grid2D(r, x)


def _claim_kernel(rm: RiskModel, h_x: float):
    claims = rm.claims
    if isinstance(claims, Exponential):
        return 0, float(claims.beta), np.zeros(1, np.int64), np.zeros(1), np.zeros(1)
    if isinstance(claims, DiscreteMixture):
        shift = np.empty(len(claims.atoms), np.int64)
        theta = np.empty(len(claims.atoms))
        for k, y in enumerate(claims.atoms):
            off = y / h_x
            n = math.floor(off)
            frac = off - n
            if frac <= 1e-9:
                shift[k], theta[k] = n, 0.0
            elif frac >= 1.0 - 1e-9:
                shift[k], theta[k] = n + 1, 0.0
            else:
                shift[k], theta[k] = n + 1, 1.0 - frac
        return 1, 0.0, shift, theta, np.array(claims.weights)
    raise TypeError(f"unsupported claims {type(claims).__name__}")


@njit(cache=True)
def _r_stencil(r, i, hr, a, b_bar, diff):
    """Weights on rows ``i+1`` and ``i-1`` from the rate drift and diffusion."""
    nr = r.shape[0]
    drift = a * (b_bar - r[i])
    up = 0.0
    dn = 0.0
    if 0 < i < nr - 1:
        dd = diff / (hr * hr)
        if diff > 0.0 and dd >= abs(drift) / (2.0 * hr):
            # centred drift keeps both neighbour weights nonnegative here
            up = dd + drift / (2.0 * hr)
            dn = dd - drift / (2.0 * hr)
        else:
            up = max(drift, 0.0) / hr + dd
            dn = max(-drift, 0.0) / hr + dd
    elif i == 0:
        up = max(drift, 0.0) / hr
    else:
        dn = max(-drift, 0.0) / hr
    return up, dn


@njit(cache=True)
def _row_terms(V, i, r, hr, hx, a, b_bar, diff, c, lam, kind, beta, shift, theta, weights, M,
               A0, d0, AM, dM, selfw):
    """Fill the per-node coefficients of row ``i`` (all columns but the last)."""
    nr, nx = V.shape
    ri = r[i]
    up, dn = _r_stencil(r, i, hr, a, b_bar, diff)
    dbase = ri + lam + up + dn
    # exact exponential weights on each cell of the piecewise-linear interpolant
    q = math.exp(-beta * hx)
    w1 = (-math.expm1(-beta * hx) - beta * hx * q) / (beta * hx) if kind == 0 else 0.0
    w0 = -math.expm1(-beta * hx) - w1
    Jprev = 0.0
    for j in range(nx - 1):
        if kind == 0:
            if j == 0:
                J = 0.0
                sw = 0.0
            else:
                J = w0 * V[i, j] + w1 * V[i, j - 1] + q * Jprev
                sw = w0
            Jprev = J
        else:
            J = 0.0
            sw = 0.0
            for k in range(shift.shape[0]):
                lo = j - shift[k]
                if lo < 0:
                    continue
                th = theta[k]
                val = (1.0 - th) * V[i, lo]
                if th > 0.0:
                    val += th * V[i, lo + 1]
                    if lo + 1 == j:
                        sw += weights[k] * th
                if lo == j:
                    sw += weights[k] * (1.0 - th)
                J += weights[k] * val
        base = lam * J
        if up > 0.0:
            base += up * V[i + 1, j]
        if dn > 0.0:
            base += dn * V[i - 1, j]
        A0[j] = base + (c / hx) * V[i, j + 1]
        d0[j] = dbase + c / hx
        if M <= c:
            AM[j] = base + ((c - M) / hx) * V[i, j + 1] + M
            dM[j] = dbase + (c - M) / hx
        elif j > 0:
            AM[j] = base + ((M - c) / hx) * V[i, j - 1] + M
            dM[j] = dbase + (M - c) / hx
        else:
            # with no surplus the payout cannot outrun the premium
            AM[j] = base + c
            dM[j] = dbase
        selfw[j] = lam * sw


def _make_solver(parallel):
    @njit(cache=True, parallel=parallel)
    def run(V, r, hr, hx, a, b_bar, diff, c, lam, kind, beta, shift, theta, weights, M,
            tol, max_iter, omega, every):
        nr, nx = V.shape
        W = V.copy()
        work = np.empty((nr, 5, nx))
        pol = np.empty((nr, nx))
        rowres = np.empty(nr)
        rowbad = np.zeros(nr)
        hist = np.empty(max_iter // every + 2)
        hist_it = np.empty(max_iter // every + 2, np.int64)
        nh = 0
        res = math.inf
        for it in range(max_iter + 1):
            for i in prange(nr):
                A0 = work[i, 0]
                d0 = work[i, 1]
                AM = work[i, 2]
                dM = work[i, 3]
                sw = work[i, 4]
                _row_terms(V, i, r, hr, hx, a, b_bar, diff, c, lam, kind, beta, shift, theta, weights, M,
                           A0, d0, AM, dM, sw)
                worst = 0.0
                bad = 0.0
                for j in range(nx - 1):
                    v = V[i, j]
                    h0 = A0[j] - d0[j] * v
                    hM = AM[j] - dM[j] * v
                    if hM >= h0:
                        h = hM
                        pol[i, j] = M
                    else:
                        h = h0
                        pol[i, j] = 0.0
                    dmax = max(d0[j], dM[j])
                    if min(d0[j], dM[j]) - sw[j] <= 0.0:
                        bad = 1.0
                    W[i, j] = v + omega * h / dmax
                    rel = abs(h) / (1.0 + abs(v))
                    if rel > worst:
                        worst = rel
                W[i, nx - 1] = V[i, nx - 1]
                pol[i, nx - 1] = M
                rowres[i] = worst
                rowbad[i] = bad
            res = rowres.max()
            if rowbad.max() > 0.0:
                hist[nh] = res
                hist_it[nh] = it
                return V, pol, res, it, hist[: nh + 1], hist_it[: nh + 1], _NONMONOTONE
            if it % every == 0 or res <= tol:
                hist[nh] = res
                hist_it[nh] = it
                nh += 1
            if res <= tol:
                return V, pol, res, it, hist[:nh], hist_it[:nh], _OK
            if it == max_iter:
                break
            V, W = W, V
        if hist_it[nh - 1] != max_iter:
            hist[nh] = res
            hist_it[nh] = max_iter
            nh += 1
        return V, pol, res, max_iter, hist[:nh], hist_it[:nh], _NOT_CONVERGED

    return run


_solve_serial = _make_solver(False)
_solve_parallel = _make_solver(True)


def _kernel_inputs(grid: Grid2D, rm: RiskModel, vd: VasicekDiscount):
    kind, beta, shift, theta, weights = _claim_kernel(rm, grid.h_x)
    hr = grid.h_r
    return (grid.r_nodes, hr, grid.h_x, vd.a, vd.b_bar, 0.5 * vd.delta_bar**2, float(rm.c), float(rm.lam),
            kind, beta, shift, theta, weights, float(rm.M))


def far_field(grid: Grid2D, rm: RiskModel, vd: VasicekDiscount) -> np.ndarray:
    """Dirichlet data at ``x_max``: the perpetuity paying ``M`` forever, per row."""
    return np.array([perpetual_payout(vd, rm.M, float(ri)) for ri in grid.r_nodes])


def discrete_perpetuity(grid: Grid2D, rm: RiskModel, vd: VasicekDiscount) -> np.ndarray:
    """Perpetuity paying ``M`` under the scheme's own rate stencil, per row.

    Solves ``(r_i + u_i + d_i) h_i - u_i h_{i+1} - d_i h_{i-1} = M``.  As an
    alternative far-field column it makes the claim-free problem exact on
    the grid, at the price of an O(h_r) offset from :func:`far_field`.
    """
    vd = validate_vasicek(vd)
    r = grid.r_nodes
    n = grid.n_r
    bands = np.zeros((3, n))
    diff = 0.5 * vd.delta_bar**2
    for i in range(n):
        up, dn = _r_stencil(r, i, grid.h_r, vd.a, vd.b_bar, diff)
        bands[1, i] = r[i] + up + dn
        if i + 1 < n:
            bands[0, i + 1] = -up
        if i > 0:
            bands[2, i - 1] = -dn
    return linalg.solve_banded((1, 1), bands, np.full(n, float(rm.M)))


def solve(grid: Grid2D, rm: RiskModel, vd: VasicekDiscount, tol: float = 1e-8, max_iter: int = 500_000,
          damping: float = 1.0, boundary: np.ndarray | None = None, history_every: int = 100) -> ValueField:
    """Iterate the scheme from ``V = 0`` until ``max |H| / (1 + |V|) <= tol``.

    ``boundary`` overrides the far-field column (used for sensitivity and
    comparison tests).  Raises :class:`ConvergenceError` after ``max_iter``
    sweeps.
    """
    rm = validate_risk_model(rm)
    vd = validate_vasicek(vd)
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    g = far_field(grid, rm, vd) if boundary is None else np.asarray(boundary, dtype=float).copy()
    if g.shape != (grid.n_r,):
        raise ValueError("boundary must hold one value per r-row")
    V0 = np.zeros((grid.n_r, grid.n_x))
    V0[:, -1] = g
    run = _solve_parallel if _threads.apply() > 1 else _solve_serial
    V, pol, res, it, hist, hist_it, status = run(V0, *_kernel_inputs(grid, rm, vd), float(tol), int(max_iter),
                                        float(damping), int(max(history_every, 1)))
    out = ValueField(V.copy(), pol.copy(), float(res), int(it), grid, g, float(rm.M), hist.copy(), hist_it.copy())
    if status == _NONMONOTONE:
        raise SchemeError("nonpositive diagonal coefficient: the grid cannot support a monotone step")
    if status == _NOT_CONVERGED:
        raise ConvergenceError(f"no convergence after {it} sweeps (residual {res:.3e} > tol {tol:.3e})",
                               out.history, out)
    return out


def _node_terms(field: ValueField, rm: RiskModel, vd: VasicekDiscount, i: int):
    grid = field.grid
    nx = grid.n_x
    args = _kernel_inputs(grid, rm, vd)
    work = np.empty((5, nx))
    _row_terms(field.V, i, *args, work[0], work[1], work[2], work[3], work[4])
    return work


def _check_interior(field: ValueField, node) -> tuple[int, int]:
    i, j = (int(v) for v in node)
    n_r, n_x = field.V.shape
    if not (0 < i < n_r - 1 and 0 < j < n_x - 1):
        raise ValueError(f"node {(i, j)} is not an interior node")
    return i, j


def hjb_residual(field: ValueField, rm: RiskModel, vd: VasicekDiscount, node) -> float:
    """``H`` at an interior node, evaluated with the policy stored in ``field``."""
    i, j = _check_interior(field, node)
    A0, d0, AM, dM, _ = _node_terms(field, rm, vd, i)
    v = field.V[i, j]
    if field.policy[i, j] == rm.M:
        return float(AM[j] - dM[j] * v)
    return float(A0[j] - d0[j] * v)


def diagonal_coefficient(field: ValueField, rm: RiskModel, vd: VasicekDiscount, node) -> float:
    """``-dH/dV_ij`` at an interior node under the stored policy."""
    i, j = _check_interior(field, node)
    _, d0, _, dM, sw = _node_terms(field, rm, vd, i)
    d = dM[j] if field.policy[i, j] == rm.M else d0[j]
    return float(d - sw[j])


def extract_threshold_curve(field: ValueField) -> ThresholdCurve:
    """Smallest surplus per row where the policy switches to ``M``.

    The switch is placed where the forward-difference slope, read at cell
    midpoints, crosses one.  Rows paying everywhere report 0; rows never
    paying report ``x_max`` and are flagged unresolved, as are all rows when
    ``M = 0``.
    """
    grid = field.grid
    n_r = grid.n_r
    h = grid.h_x
    x = grid.x_nodes
    b = np.full(n_r, grid.x_max)
    ok = np.zeros(n_r, dtype=bool)
    if field.M == 0.0:
        return ThresholdCurve(grid.r_nodes.copy(), b, ok)
    for i in range(n_r):
        paying = field.policy[i, :-1] == field.M
        if not paying.any():
            continue
        j = int(np.argmax(paying))
        ok[i] = True
        if j == 0:
            b[i] = 0.0
            continue
        row = field.V[i]
        s_prev = (row[j] - row[j - 1]) / h
        s_here = (row[j + 1] - row[j]) / h
        mid_prev = x[j - 1] + 0.5 * h
        if s_prev != s_here:
            w = min(max((s_prev - 1.0) / (s_prev - s_here), 0.0), 1.0)
        else:
            w = 0.5
        b[i] = mid_prev + w * h
    return ThresholdCurve(grid.r_nodes.copy(), b, ok)


def refine_and_compare(rm: RiskModel, vd: VasicekDiscount, base: Domain, levels: int = 3, factor: int = 2,
                       tol: float = 1e-8, max_iter: int = 2_000_000) -> RefinementReport:
    """Solve on grids with spacings divided by ``factor**k`` and compare on the coarser nodes."""
    if levels < 2:
        raise ValueError("levels must be at least 2")
    if factor not in (1, 2):
        raise ValueError("factor must be 1 or 2")
    fields = []
    for k in range(levels):
        scale = factor**k
        dom = Domain(base.x_max, (base.n_x - 1) * scale + 1, (base.n_r - 1) * scale + 1,
                     base.r_halfwidth_in_stationary_sds, base.min_halfwidth)
        fields.append(solve(build_grid(vd, rm, dom), rm, vd, tol=tol, max_iter=max_iter))
    diffs = np.empty(levels - 1)
    for k in range(1, levels):
        fine = fields[k].V[::factor, ::factor]
        diffs[k - 1] = float(np.max(np.abs(fine - fields[k - 1].V)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = diffs[:-1] / diffs[1:]
    return RefinementReport(tuple(fields), diffs, ratios)


def r_lipschitz(field: ValueField) -> float:
    """``max |V(r_{i+1}, x) - V(r_i, x)| / h_r`` over the grid."""
    return float(np.max(np.abs(np.diff(field.V, axis=0))) / field.grid.h_r)


def lipschitz_bound(vd: VasicekDiscount, M: float, r) -> float:
    """Largest ``value_upper_bound(r) / a`` over the given rates."""
    return float(np.max(value_upper_bound(vd, M, r)) / vd.a)


def default_x_max(rm: RiskModel, vd: VasicekDiscount, n_r: int = 9, h_x: float = 0.1,
                  boundary_bump: float = 0.01, interior_limit: float = 1e-3, max_doublings: int = 8,
                  tol: float = 1e-7) -> float:
    """Grow ``x_max`` until bumping the far-field data matters little on ``[0, x_max/2]``.

    Starts from ``5 * mean_claim * max(1, lam / (c - M))`` (``c`` in place of
    ``c - M`` when ``M >= c``) and doubles until a ``boundary_bump`` relative
    change of the Dirichlet column moves values on the lower half of the
    surplus axis by less than ``interior_limit`` relative.
    """
    rm = validate_risk_model(rm)
    vd = validate_vasicek(vd)
    margin = rm.c - rm.M if rm.c > rm.M else rm.c
    x_max = 5.0 * rm.claims.mean() * max(1.0, rm.lam / margin)
    for _ in range(max_doublings + 1):
        n_x = max(int(round(x_max / h_x)) + 1, MIN_NODES)
        grid = build_grid(vd, rm, Domain(x_max, n_x, n_r))
        g = far_field(grid, rm, vd)
        base = solve(grid, rm, vd, tol=tol, boundary=g)
        bumped = solve(grid, rm, vd, tol=tol, boundary=g * (1.0 + boundary_bump))
        half = grid.x_nodes <= 0.5 * x_max
        ref = np.maximum(np.abs(base.V[:, half]), 1e-300)
        if np.all(np.abs(bumped.V[:, half] - base.V[:, half]) <= interior_limit * ref) or rm.M == 0:
            return x_max
        x_max *= 2.0
    return x_max
