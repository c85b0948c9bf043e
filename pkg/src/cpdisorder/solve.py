"""Dynamic-programming core: value iteration on a grid and boundary extraction.

The value of the detection problem is the largest nonpositive fixed point of a
single-arrival Bellman operator: starting from a state, accumulate discounted
running cost along the closed-form flow, average the input function over the
post-arrival state at the first arrival, and take the infimum over the
deterministic waiting time (including "stop now" and "never stop").  Iterating
the operator from zero converges uniformly at the geometric rate
``(mu / (mu + lam))^n / c``, which gives a computable error bound per iterate.

Numerical scheme (all tolerances fixed here, none deferred):

* time quadrature: composite Simpson with per-interval midpoints, step
  ``0.05 / (lam + mu)`` by default, truncated where the discount falls below
  ``1e-10``; the "never stop" candidate gets an explicit tail term;
* the infimum is a running minimum over the shared quadrature nodes plus the
  two endpoint candidates; sharing one candidate set across grid nodes makes
  monotonicity in each coordinate, row/column midpoint concavity, and the
  pointwise ordering of successive iterates exact up to roundoff;
* pointwise evaluations (`bellman_value`) additionally refine the discrete
  argmin by golden-section search to absolute tolerance 1e-8;
* state truncation: the input function is read as 0 outside the grid square,
  which is valid because the grid is sized to contain a closed-form superset
  of the continuation region.

Midpoint concavity along grid diagonals cannot be preserved exactly by
bilinear interpolation (its per-cell saddle term is oblique-direction convex),
so diagonal checks are reported through the module logger instead of aborting
the iteration; rows and columns are enforced at 1e-9.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParamsError, SolverInvariantError
from .flow import _x_coeffs, _y_coeffs, region_spec
from .model import (
    DegenerateMarks,
    ExponentialPairMarks,
    FiniteDiscreteMarks,
    MarkModel,
    ModelParams,
    Statistic,
    classify_regime,
)

logger = logging.getLogger(__name__)

#: Default count of Gauss-Legendre nodes for exponential-pair mark averaging.
MARK_QUAD_NODES = 64

#: Absolute time tolerance of the golden-section argmin refinement.
REFINE_TOL = 1e-8

#: Numerator of the default numerical-zero level (divided by the delay cost).
DEFAULT_EPSILON_FACTOR = 1e-6

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the value function on ``[0, phi_max]^2``.

    ``time_step`` is the quadrature step of the cost integral along the flow
    and ``horizon_tol`` the discount level at which the integral is truncated.
    """

    phi_max: float
    n0: int = 96
    n1: int = 96
    time_step: float = 0.0125
    horizon_tol: float = 1e-10

    @property
    def h0(self) -> float:
        return self.phi_max / (self.n0 - 1)

    @property
    def h1(self) -> float:
        return self.phi_max / (self.n1 - 1)

    def axis0(self) -> np.ndarray:
        return np.linspace(0.0, self.phi_max, self.n0)

    def axis1(self) -> np.ndarray:
        return np.linspace(0.0, self.phi_max, self.n1)


def default_grid_spec(params: ModelParams, n0: int = 96, n1: int = 96,
                      phi_max: float | None = None,
                      time_step: float | None = None,
                      horizon_tol: float = 1e-10) -> GridSpec:
    """Grid sized so that the state square contains a closed-form stopping superset.

    Outside the square the value function is provably zero, which justifies
    the truncation rule of the interpolator.
    """
    regime = classify_regime(params)
    level = params.cost_threshold
    xi = regime.xi if regime.xi is not None else 0.0
    base = 2.0 * max(level, xi + level)
    candidates = [base]
    if regime.tag in ("R4", "R5"):
        # cover the polygonal continuation superset, but never blow the grid
        # up past resolving the boundary region (its far tail carries
        # exponentially little value)
        candidates.append(min(1.05 * region_spec(params).xi, 4.0 * base))
    if regime.tag in ("R6", "R7"):
        # the immediate-stop half-plane must cover everything off the grid
        candidates.append(2.0 / params.c - (3.0 - params.m))
    if time_step is None:
        time_step = 0.05 / (params.lam + params.mu)
    return GridSpec(phi_max=max(candidates), n0=n0, n1=n1,
                    time_step=time_step, horizon_tol=horizon_tol)


def validate_grid_spec(params: ModelParams, spec: GridSpec) -> None:
    violations = []
    regime = classify_regime(params)
    level = params.cost_threshold
    xi = regime.xi if regime.xi is not None else 0.0
    floor = 2.0 * max(level, xi + level)
    if spec.phi_max < floor * (1.0 - 1e-12):
        violations.append(f"phi_max {spec.phi_max} below required {floor}")
    if spec.n0 < 32 or spec.n1 < 32:
        violations.append("grid needs at least 32 nodes per axis")
    cap = 0.1 / (params.lam + params.mu)
    if not (0.0 < spec.time_step <= cap * (1.0 + 1e-12)):
        violations.append(f"time_step must lie in (0, {cap}]")
    if not (0.0 < spec.horizon_tol <= 1e-10):
        violations.append("horizon_tol must lie in (0, 1e-10]")
    if violations:
        raise InvalidParamsError(violations)


@dataclass(frozen=True)
class ValueGrid:
    """One value-iteration iterate on a grid, with its analytic error bound."""

    spec: GridSpec
    values: np.ndarray
    iteration: int
    error_bound: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.spec.n0, self.spec.n1):
            raise SolverInvariantError(f"value array shape {v.shape} does not match grid spec")
        v.flags.writeable = False


@dataclass(frozen=True)
class Boundary:
    """Stop-region boundary curve: smallest ``phi1`` per ``phi0`` with value above ``-epsilon``."""

    phi0: np.ndarray
    gamma: np.ndarray
    epsilon_level: float


def convergence_factor(params: ModelParams) -> float:
    """Per-iteration contraction factor ``mu / (mu + lam)``."""
    return params.mu / (params.mu + params.lam)


def error_bound(params: ModelParams, n: int) -> float:
    """Uniform distance bound between iterate ``n`` and the limit value function."""
    return convergence_factor(params) ** n / params.c


def _interp_core(values: np.ndarray, phi_max: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    n0, n1 = values.shape
    outside = (x > phi_max) | (y > phi_max)
    fx = np.clip(x, 0.0, phi_max) * ((n0 - 1) / phi_max)
    fy = np.clip(y, 0.0, phi_max) * ((n1 - 1) / phi_max)
    i = np.minimum(fx.astype(np.int64), n0 - 2)
    j = np.minimum(fy.astype(np.int64), n1 - 2)
    tx = fx - i
    ty = fy - j
    flat = values.ravel()
    base = i * n1 + j
    v00 = flat[base]
    v01 = flat[base + 1]
    v10 = flat[base + n1]
    v11 = flat[base + n1 + 1]
    low = v00 + tx * (v10 - v00)
    high = v01 + tx * (v11 - v01)
    return np.where(outside, 0.0, low + ty * (high - low))


def interpolate(vgrid: ValueGrid, s: Statistic) -> float:
    """Bilinear read of the grid; 0 beyond the square (where the value provably vanishes)."""
    out = _interp_core(vgrid.values, vgrid.spec.phi_max,
                       np.asarray([s.phi0]), np.asarray([s.phi1]))
    return float(out[0])


def interpolate_many(vgrid: ValueGrid, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _interp_core(vgrid.values, vgrid.spec.phi_max,
                        np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def _mark_atoms(marks: MarkModel, mu: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature atoms (weights, phi0-factor, phi1-factor) for the post-jump average.

    The exponential pair is integrated by Gauss-Legendre after substituting
    ``u = exp(-a0 y)``, which maps the baseline mark law to the uniform law on
    (0, 1); the likelihood ratio becomes ``(a1/a0) u^{(a1-a0)/a0}``.
    """
    if isinstance(marks, DegenerateMarks):
        ratios = np.asarray([1.0])
        weights = np.asarray([1.0])
    elif isinstance(marks, FiniteDiscreteMarks):
        weights = np.asarray(marks.p0, dtype=float)
        ratios = np.asarray(marks.p1, dtype=float) / weights
    elif isinstance(marks, ExponentialPairMarks):
        nodes, w = np.polynomial.legendre.leggauss(MARK_QUAD_NODES)
        u = 0.5 * (nodes + 1.0)
        weights = 0.5 * w
        ratios = (marks.a1 / marks.a0) * u ** ((marks.a1 - marks.a0) / marks.a0)
    else:
        raise InvalidParamsError([f"unknown mark model {type(marks).__name__}"])
    return weights, (1.0 + 1.0 / mu) * ratios, (1.0 + 2.0 / mu) * ratios


def post_jump_average(params: ModelParams, marks: MarkModel, vgrid: ValueGrid,
                      s: Statistic) -> float:
    """Expected grid value of the state immediately after one baseline-law arrival."""
    w, f0, f1 = _mark_atoms(marks, params.mu)
    vals = _interp_core(vgrid.values, vgrid.spec.phi_max, f0 * s.phi0, f1 * s.phi1)
    return float(np.dot(w, vals))


def running_integrand(params: ModelParams, marks: MarkModel, vgrid: ValueGrid,
                      s: Statistic) -> float:
    """Undiscounted integrand of the cost accumulation: running cost plus rate-weighted post-jump average."""
    g = s.total - params.cost_threshold
    return g + params.mu * post_jump_average(params, marks, vgrid, s)


class _BellmanContext:
    """Precomputed quadrature data shared by every operator application."""

    def __init__(self, params: ModelParams, marks: MarkModel, spec: GridSpec):
        self.params = params
        self.spec = spec
        self.rho = params.lam + params.mu
        self.level = params.cost_threshold
        self.dt = spec.time_step
        horizon = math.log(1.0 / spec.horizon_tol) / self.rho
        self.n_intervals = int(math.ceil(horizon / self.dt))
        self.t_end = self.n_intervals * self.dt
        nodes = np.arange(self.n_intervals + 1) * self.dt
        mids = nodes[:-1] + 0.5 * self.dt
        self.node_ax, self.node_bx = _x_coeffs(params, nodes)
        self.node_ay, self.node_by = _y_coeffs(params, nodes)
        self.mid_ax, self.mid_bx = _x_coeffs(params, mids)
        self.mid_ay, self.mid_by = _y_coeffs(params, mids)
        self.node_disc = np.exp(-self.rho * nodes)
        self.mid_disc = np.exp(-self.rho * mids)
        self.nodes = nodes
        self.weights, self.jump0, self.jump1 = _mark_atoms(marks, params.mu)
        self.phi_max = spec.phi_max
        # golden-section iterations needed to shrink a two-interval bracket to tolerance
        self.refine_iters = max(4, int(math.ceil(
            math.log(REFINE_TOL / (2.0 * self.dt)) / math.log(_GOLDEN))))

    def integrand(self, f_vals: np.ndarray, ax, bx, ay, by, disc, x0, y0):
        """Discounted integrand at one shared time for a batch of start states."""
        x = ax + bx * x0
        y = ay + by * y0
        g = x + y - self.level
        s_avg = 0.0
        for w, j0, j1 in zip(self.weights, self.jump0, self.jump1):
            s_avg = s_avg + w * _interp_core(f_vals, self.phi_max, j0 * x, j1 * y)
        return disc * (g + self.params.mu * s_avg)

    def integrand_at_times(self, f_vals: np.ndarray, t, x0, y0):
        """Discounted integrand at per-point times (used by the refinement stage)."""
        ax, bx = _x_coeffs(self.params, t)
        ay, by = _y_coeffs(self.params, t)
        disc = np.exp(-self.rho * np.asarray(t, dtype=float))
        return self.integrand(f_vals, ax, bx, ay, by, disc, x0, y0)


def _bellman_batch(ctx: _BellmanContext, f_vals: np.ndarray, x0: np.ndarray, y0: np.ndarray,
                   refine: bool, t_min: np.ndarray | None = None):
    """Apply the Bellman operator to a batch of states.

    Returns ``(values, argmins)``.  ``t_min`` restricts the minimization to
    waiting times ``>= t_min`` (used by the delay-equation check); ``refine``
    runs the golden-section polish around the discrete argmin.
    """
    n = x0.size
    params = ctx.params
    dt = ctx.dt
    cum = np.zeros(n)
    if t_min is None:
        best = np.zeros(n)
        tmin_cum = None
    else:
        best = np.where(t_min <= 0.0, 0.0, np.inf)
        tmin_cum = np.zeros(n)
    best_t = np.zeros(n)
    bracket_a = np.zeros(n)
    bracket_cum = np.zeros(n)
    h_prev = ctx.integrand(f_vals, ctx.node_ax[0], ctx.node_bx[0],
                           ctx.node_ay[0], ctx.node_by[0], ctx.node_disc[0], x0, y0)
    for k in range(ctx.n_intervals):
        u0 = ctx.nodes[k]
        u1 = ctx.nodes[k + 1]
        h_mid = ctx.integrand(f_vals, ctx.mid_ax[k], ctx.mid_bx[k],
                              ctx.mid_ay[k], ctx.mid_by[k], ctx.mid_disc[k], x0, y0)
        h_next = ctx.integrand(f_vals, ctx.node_ax[k + 1], ctx.node_bx[k + 1],
                               ctx.node_ay[k + 1], ctx.node_by[k + 1],
                               ctx.node_disc[k + 1], x0, y0)
        cum_next = cum + (dt / 6.0) * (h_prev + 4.0 * h_mid + h_next)
        if t_min is not None:
            crossing = (t_min > u0) & (t_min <= u1)
            if np.any(crossing):
                tm = t_min[crossing]
                xm, ym = x0[crossing], y0[crossing]
                h_a = ctx.integrand_at_times(f_vals, np.full(tm.shape, u0), xm, ym)
                h_m = ctx.integrand_at_times(f_vals, 0.5 * (u0 + tm), xm, ym)
                h_t = ctx.integrand_at_times(f_vals, tm, xm, ym)
                part = cum[crossing] + ((tm - u0) / 6.0) * (h_a + 4.0 * h_m + h_t)
                tmin_cum[crossing] = part
                upd = part < best[crossing]
                sel = np.flatnonzero(crossing)[upd]
                best[sel] = part[upd]
                best_t[sel] = tm[upd]
                bracket_a[sel] = tm[upd]
                bracket_cum[sel] = part[upd]
        improved = cum_next < best
        if t_min is not None:
            improved &= (u1 >= t_min)
        if np.any(improved):
            best[improved] = cum_next[improved]
            best_t[improved] = u1
            if t_min is None:
                bracket_a[improved] = u0
                bracket_cum[improved] = cum[improved]
            else:
                before = improved & (t_min <= u0)
                inside = improved & ~ (t_min <= u0)
                bracket_a[before] = u0
                bracket_cum[before] = cum[before]
                bracket_a[inside] = t_min[inside]
                bracket_cum[inside] = tmin_cum[inside]
        cum = cum_next
        h_prev = h_next
    # "never stop" candidate: integral to the horizon plus a constant-integrand tail
    tail = h_prev / ctx.rho
    value_inf = cum + tail
    if refine:
        finite_best, finite_t = _refine_minimum(ctx, f_vals, x0, y0, best, best_t,
                                                bracket_a, bracket_cum)
    else:
        finite_best, finite_t = best, best_t
    take_inf = value_inf < finite_best
    values = np.where(take_inf, value_inf, finite_best)
    argmin = np.where(take_inf, np.inf, finite_t)
    if t_min is None:
        # the unrestricted operator provably maps into [-1/c, 0]; the
        # restricted variant (delay-equation check) may be positive
        values = np.clip(values, -1.0 / params.c, 0.0)
    return values, argmin


def _refine_minimum(ctx: _BellmanContext, f_vals, x0, y0, best, best_t, bracket_a, bracket_cum):
    """Golden-section polish of the discrete running minimum, vectorized over states."""
    live = np.isfinite(best)
    a = bracket_a.copy()
    b = np.minimum(best_t + ctx.dt, ctx.t_end)
    bad = ~live | (b - a <= REFINE_TOL)
    a0 = a.copy()
    base = bracket_cum.copy()
    h_a = np.zeros_like(best)
    act = ~bad
    if not np.any(act):
        return best, best_t
    h_a[act] = ctx.integrand_at_times(f_vals, a0[act], x0[act], y0[act])

    def segment_value(t, mask):
        mid = 0.5 * (a0[mask] + t[mask])
        h_m = ctx.integrand_at_times(f_vals, mid, x0[mask], y0[mask])
        h_t = ctx.integrand_at_times(f_vals, t[mask], x0[mask], y0[mask])
        return base[mask] + ((t[mask] - a0[mask]) / 6.0) * (h_a[mask] + 4.0 * h_m + h_t)

    c1 = b - _GOLDEN * (b - a)
    c2 = a + _GOLDEN * (b - a)
    f1 = np.full_like(best, np.inf)
    f2 = np.full_like(best, np.inf)
    f1[act] = segment_value(c1, act)
    f2[act] = segment_value(c2, act)
    for _ in range(ctx.refine_iters):
        shrink_right = f1 <= f2
        move = act & shrink_right
        b[move] = c2[move]
        c2[move] = c1[move]
        f2[move] = f1[move]
        c1[move] = b[move] - _GOLDEN * (b[move] - a[move])
        move2 = act & ~shrink_right
        a[move2] = c1[move2]
        c1[move2] = c2[move2]
        f1[move2] = f2[move2]
        c2[move2] = a[move2] + _GOLDEN * (b[move2] - a[move2])
        new_t = np.where(shrink_right, c1, c2)
        new_f = np.full_like(best, np.inf)
        new_f[act] = segment_value(new_t, act)
        f1 = np.where(shrink_right, new_f, f1)
        f2 = np.where(shrink_right, f2, new_f)
    refined = np.minimum(f1, f2)
    refined_t = np.where(f1 <= f2, c1, c2)
    out_v = np.where(act & (refined < best), refined, best)
    out_t = np.where(act & (refined < best), refined_t, best_t)
    return out_v, out_t


def bellman_value(params: ModelParams, marks: MarkModel, vgrid: ValueGrid, s: Statistic,
                  refine: bool = True) -> tuple[float, float]:
    """Single-state Bellman operator value and its minimizing waiting time (``inf`` = never stop)."""
    ctx = _BellmanContext(params, marks, vgrid.spec)
    vals, argmin = _bellman_batch(ctx, np.asarray(vgrid.values), np.asarray([s.phi0]),
                                  np.asarray([s.phi1]), refine=refine)
    return float(vals[0]), float(argmin[0])


def _check_iterate(params: ModelParams, vals: np.ndarray, prev: np.ndarray | None,
                   iteration: int) -> None:
    problems = []
    floor = -1.0 / params.c
    if np.any(vals < floor - 1e-12) or np.any(vals > 1e-15):
        problems.append("values escape [-1/c, 0]")
    if np.any(np.diff(vals, axis=0) < -1e-12):
        problems.append("values not nondecreasing along phi0")
    if np.any(np.diff(vals, axis=1) < -1e-12):
        problems.append("values not nondecreasing along phi1")
    row_bulge = vals[:, 2:] + vals[:, :-2] - 2.0 * vals[:, 1:-1]
    col_bulge = vals[2:, :] + vals[:-2, :] - 2.0 * vals[1:-1, :]
    if row_bulge.size and float(np.max(row_bulge)) > 1e-9:
        problems.append(f"row midpoint concavity violated by {float(np.max(row_bulge)):.3e}")
    if col_bulge.size and float(np.max(col_bulge)) > 1e-9:
        problems.append(f"column midpoint concavity violated by {float(np.max(col_bulge)):.3e}")
    if prev is not None and np.any(vals > prev + 1e-15):
        problems.append("iterate exceeds its predecessor somewhere")
    if problems:
        raise SolverInvariantError(
            f"iterate {iteration} failed structural checks (grid/quadrature bug): " + "; ".join(problems))
    diag = vals[2:, 2:] + vals[:-2, :-2] - 2.0 * vals[1:-1, 1:-1]
    anti = vals[2:, :-2] + vals[:-2, 2:] - 2.0 * vals[1:-1, 1:-1]
    worst = max(float(np.max(diag)) if diag.size else 0.0,
                float(np.max(anti)) if anti.size else 0.0)
    if worst > 1e-9:
        logger.warning("iterate %d: diagonal midpoint concavity off by %.3e "
                       "(bilinear-interpolation artifact, not enforced)", iteration, worst)


def value_iteration(params: ModelParams, marks: MarkModel, spec: GridSpec | None = None,
                    n_max: int = 60, target_err: float = 1e-6) -> list[ValueGrid]:
    """Iterate the Bellman operator from zero until the analytic error bound meets ``target_err``.

    Returns every iterate (the staged stopping rule needs the whole ladder).
    Aborts with :class:`SolverInvariantError` if an iterate violates a
    structural invariant, which signals a solver bug rather than bad data.
    """
    if spec is None:
        spec = default_grid_spec(params)
    validate_grid_spec(params, spec)
    kappa = convergence_factor(params)
    n_needed = max(1, int(math.ceil(math.log(target_err * params.c) / math.log(kappa))))
    n_iter = min(n_max, n_needed)
    ctx = _BellmanContext(params, marks, spec)
    xs = spec.axis0()
    ys = spec.axis1()
    x0 = np.repeat(xs, spec.n1)
    y0 = np.tile(ys, spec.n0)
    f_vals = np.zeros((spec.n0, spec.n1))
    out: list[ValueGrid] = []
    for n in range(1, n_iter + 1):
        new_vals, _ = _bellman_batch(ctx, f_vals, x0, y0, refine=False)
        new_vals = new_vals.reshape(spec.n0, spec.n1)
        _check_iterate(params, new_vals, out[-1].values if out else None, n)
        out.append(ValueGrid(spec=spec, values=new_vals, iteration=n,
                             error_bound=error_bound(params, n)))
        f_vals = new_vals
    return out


def extract_boundary(vgrid: ValueGrid, epsilon_level: float) -> Boundary:
    """Per-abscissa smallest ordinate where the grid value reaches ``-epsilon_level``.

    Uses linear inverse interpolation between the straddling nodes; rows whose
    values stay below the level everywhere get ``inf``.  The extracted curve
    is checked for the structural facts it must satisfy (nonincreasing;
    midpoint convex within one grid cell).
    """
    vals = np.asarray(vgrid.values)
    spec = vgrid.spec
    level = -epsilon_level
    ys = spec.axis1()
    reached = vals >= level
    found = reached.any(axis=1)
    first = np.argmax(reached, axis=1)
    gamma = np.full(spec.n0, np.inf)
    at_zero = found & (first == 0)
    gamma[at_zero] = 0.0
    interior = found & (first > 0)
    idx = np.flatnonzero(interior)
    j = first[idx]
    v_lo = vals[idx, j - 1]
    v_hi = vals[idx, j]
    frac = (level - v_lo) / (v_hi - v_lo)
    gamma[idx] = ys[j - 1] + frac * spec.h1
    fin = np.isfinite(gamma)
    g = gamma[fin]
    if g.size >= 2 and np.any(np.diff(g) > 1e-9):
        raise SolverInvariantError("extracted boundary is not nonincreasing")
    if g.size >= 3:
        bulge = g[:-2] + g[2:] - 2.0 * g[1:-1]
        if np.any(bulge < -(spec.h1 + 1e-9)):
            raise SolverInvariantError("extracted boundary violates midpoint convexity beyond one cell")
    return Boundary(phi0=spec.axis0(), gamma=gamma, epsilon_level=epsilon_level)


def delay_equation_residual(params: ModelParams, marks: MarkModel, vgrid: ValueGrid,
                            s: Statistic, t: float) -> float:
    """Self-test of the solver: both sides of the dynamic-programming delay identity.

    The operator restricted to waiting times ``>= t`` must equal the cost
    accumulated up to ``t`` plus the discounted unrestricted operator applied
    at the flowed state.  Both sides are evaluated with the same quadrature,
    so the residual measures internal consistency only.
    """
    if t < 0.0:
        raise InvalidParamsError(["delay-equation time must be nonnegative"])
    ctx = _BellmanContext(params, marks, vgrid.spec)
    f_vals = np.asarray(vgrid.values)
    x0 = np.asarray([s.phi0])
    y0 = np.asarray([s.phi1])
    lhs, _ = _bellman_batch(ctx, f_vals, x0, y0, refine=True, t_min=np.asarray([t]))
    cost_to_t = _integral_to(ctx, f_vals, x0, y0, t)
    ax, bx = _x_coeffs(params, t)
    ay, by = _y_coeffs(params, t)
    moved = Statistic(float(ax + bx * s.phi0), float(ay + by * s.phi1))
    inner, _ = bellman_value(params, marks, vgrid, moved, refine=True)
    rhs = float(cost_to_t[0]) + math.exp(-ctx.rho * t) * inner
    return abs(float(lhs[0]) - rhs)


def _integral_to(ctx: _BellmanContext, f_vals, x0, y0, t: float) -> np.ndarray:
    """Cumulative discounted cost integral along the flow up to time ``t``."""
    k_full = min(int(math.floor(t / ctx.dt)), ctx.n_intervals)
    cum = np.zeros(x0.size)
    h_prev = ctx.integrand(f_vals, ctx.node_ax[0], ctx.node_bx[0],
                           ctx.node_ay[0], ctx.node_by[0], ctx.node_disc[0], x0, y0)
    for k in range(k_full):
        h_mid = ctx.integrand(f_vals, ctx.mid_ax[k], ctx.mid_bx[k],
                              ctx.mid_ay[k], ctx.mid_by[k], ctx.mid_disc[k], x0, y0)
        h_next = ctx.integrand(f_vals, ctx.node_ax[k + 1], ctx.node_bx[k + 1],
                               ctx.node_ay[k + 1], ctx.node_by[k + 1],
                               ctx.node_disc[k + 1], x0, y0)
        cum += (ctx.dt / 6.0) * (h_prev + 4.0 * h_mid + h_next)
        h_prev = h_next
    t0 = k_full * ctx.dt
    if t > t0:
        tm = np.full(x0.shape, t)
        h_m = ctx.integrand_at_times(f_vals, np.full(x0.shape, 0.5 * (t0 + t)), x0, y0)
        h_t = ctx.integrand_at_times(f_vals, tm, x0, y0)
        cum += ((t - t0) / 6.0) * (h_prev + 4.0 * h_m + h_t)
    return cum


def stage_exit_time(params: ModelParams, marks: MarkModel, vgrids: list[ValueGrid],
                    n: int, s: Statistic, epsilon_level: float | None = None) -> float:
    """First time the flow from ``s`` reaches the numerical zero set of iterate ``n + 1``.

    ``vgrids`` is the ladder returned by :func:`value_iteration` (entry ``k``
    holds iterate ``k + 1``).  Scans at the quadrature step, then bisects;
    ``inf`` if the zero set is not reached before the discount horizon.
    """
    if n < 0 or n >= len(vgrids):
        raise InvalidParamsError([f"need iterate {n + 1} but only {len(vgrids)} grids supplied"])
    vgrid = vgrids[n]
    if epsilon_level is None:
        epsilon_level = DEFAULT_EPSILON_FACTOR / params.c
    return _first_hit_along_flow(params, vgrid, s, epsilon_level)


def _first_hit_along_flow(params: ModelParams, vgrid: ValueGrid, s: Statistic,
                          epsilon_level: float) -> float:
    spec = vgrid.spec
    rho = params.lam + params.mu
    horizon = math.log(1.0 / spec.horizon_tol) / rho
    step = spec.time_step

    def hit(t: float) -> bool:
        out = _interp_core(vgrid.values, spec.phi_max,
                           *(np.asarray([v]) for v in _flow_pair(params, t, s)))
        return float(out[0]) >= -epsilon_level

    if hit(0.0):
        return 0.0
    t_lo = 0.0
    t_hi = step
    while t_hi <= horizon:
        if hit(t_hi):
            for _ in range(60):
                mid = 0.5 * (t_lo + t_hi)
                if hit(mid):
                    t_hi = mid
                else:
                    t_lo = mid
            return t_hi
        t_lo = t_hi
        t_hi += step
    return math.inf


def _flow_pair(params: ModelParams, t: float, s: Statistic) -> tuple[float, float]:
    ax, bx = _x_coeffs(params, t)
    ay, by = _y_coeffs(params, t)
    return float(ax + bx * s.phi0), float(ay + by * s.phi1)


def save_value_grid(vgrid: ValueGrid, csv_path: str, json_path: str,
                    extra: dict | None = None) -> None:
    """Write a grid as plain CSV (phi0, phi1, value) plus a JSON header."""
    spec = vgrid.spec
    header = {
        "phi_max": spec.phi_max, "n0": spec.n0, "n1": spec.n1,
        "time_step": spec.time_step, "horizon_tol": spec.horizon_tol,
        "iteration": vgrid.iteration, "error_bound": vgrid.error_bound,
    }
    if extra:
        header.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, indent=2)
        fh.write("\n")
    xs = spec.axis0()
    ys = spec.axis1()
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("phi0,phi1,value\n")
        for i in range(spec.n0):
            for j in range(spec.n1):
                fh.write(f"{float(xs[i])!r},{float(ys[j])!r},{float(vgrid.values[i, j])!r}\n")


def load_value_grid(csv_path: str, json_path: str) -> ValueGrid:
    with open(json_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    spec = GridSpec(phi_max=header["phi_max"], n0=header["n0"], n1=header["n1"],
                    time_step=header["time_step"], horizon_tol=header["horizon_tol"])
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, usecols=2)
    values = np.asarray(data, dtype=float).reshape(spec.n0, spec.n1)
    return ValueGrid(spec=spec, values=values, iteration=int(header["iteration"]),
                     error_bound=float(header["error_bound"]))
