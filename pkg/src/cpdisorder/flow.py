"""Closed-form deterministic dynamics of the filtered state and the exact region geometry.

Between arrivals each coordinate of the filtered state follows an autonomous
linear ODE with explicit exponential solution; at an arrival both coordinates
are multiplied by a positive factor.  Because flows and jumps are affine in
the state, every geometric object used by the closed-form analysis (the
advantage region, the zero-drift line, the stopping-region supersets and
boundary segments) is a finite union of half-planes and can be evaluated
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RegionUndefinedError
from .model import (
    BRANCH_TOL,
    MarkModel,
    ModelParams,
    RegimeClass,
    Statistic,
    classify_regime,
    likelihood_ratio,
)

#: Absolute tolerance of the exit-time bisection.
EXIT_TIME_TOL = 1e-10

#: Absolute tolerance for membership in a line segment (measure-zero region).
LINE_TOL = 1e-9

#: Region identifiers accepted by :func:`in_region`.
REGION_NAMES = ("continuation_hull", "stop_wedge", "stop_halfplane",
                "entrance_segment", "entrance_segment_slow", "exit_segment",
                "crest_wedge")

_REGION_REGIMES = {
    "continuation_hull": ("R4", "R5"),
    "stop_wedge": ("R6",),
    "stop_halfplane": ("R7",),
    "entrance_segment": ("R4",),
    "entrance_segment_slow": ("R5",),
    "exit_segment": ("R6",),
    "crest_wedge": ("R3",),
}


def _x_coeffs(params: ModelParams, t):
    """Affine coefficients (a, b) with x(t, x0) = a + b * x0; t may be an ndarray."""
    lam, m = params.lam, params.m
    if abs(lam - 1.0) < BRANCH_TOL:
        return (2.0 - m) * np.asarray(t, dtype=float), np.ones_like(np.asarray(t, dtype=float))
    k = lam - 1.0
    kt = k * np.asarray(t, dtype=float)
    return (lam * (2.0 - m) / k) * np.expm1(kt), np.exp(kt)


def _y_coeffs(params: ModelParams, t):
    """Affine coefficients (a, b) with y(t, y0) = a + b * y0; t may be an ndarray."""
    lam, m = params.lam, params.m
    if abs(lam - 2.0) < BRANCH_TOL:
        return 2.0 * (m - 1.0) * np.asarray(t, dtype=float), np.ones_like(np.asarray(t, dtype=float))
    k = lam - 2.0
    kt = k * np.asarray(t, dtype=float)
    return (lam * (m - 1.0) / k) * np.expm1(kt), np.exp(kt)


def flow_xy(params: ModelParams, t, x0, y0):
    """Both flow coordinates after (signed) time ``t``; broadcasts over ndarrays."""
    ax, bx = _x_coeffs(params, t)
    ay, by = _y_coeffs(params, t)
    return ax + bx * x0, ay + by * y0


def flow(params: ModelParams, t: float, s: Statistic) -> Statistic:
    """Deterministic no-arrival motion of the filtered state over signed time ``t``."""
    x, y = flow_xy(params, t, s.phi0, s.phi1)
    return Statistic(float(x), float(y))


def drift(params: ModelParams, s: Statistic) -> tuple[float, float]:
    """Instantaneous inter-arrival velocity of the filtered state."""
    lam, m = params.lam, params.m
    return (lam * (2.0 - m) + (lam - 1.0) * s.phi0,
            lam * (m - 1.0) + (lam - 2.0) * s.phi1)


def jump_update(params: ModelParams, marks: MarkModel, s: Statistic, y: float) -> Statistic:
    """State immediately after an arrival with mark value ``y``."""
    r = likelihood_ratio(marks, y)
    return Statistic((1.0 + 1.0 / params.mu) * r * s.phi0,
                     (1.0 + 2.0 / params.mu) * r * s.phi1)


def sum_drift(params: ModelParams, s: Statistic) -> float:
    """Time derivative of ``phi0 + phi1`` along the no-arrival flow.

    Its zero set is the line on which the coordinate sum crests; the sum is
    rising below the line and falling above it.
    """
    lam = params.lam
    return (lam - 1.0) * s.phi0 + (lam - 2.0) * s.phi1 + lam


def in_advantageous_region(params: ModelParams, s: Statistic) -> bool:
    """Whether the running cost at ``s`` is nonpositive (boundary included)."""
    return s.total <= params.cost_threshold


def mean_reversion_point(params: ModelParams) -> Statistic | None:
    """Fixed point of the inter-arrival flow; exists only for disorder rate below 1."""
    lam, m = params.lam, params.m
    if lam >= 1.0:
        return None
    return Statistic(lam * (2.0 - m) / (1.0 - lam), lam * (m - 1.0) / (2.0 - lam))


def sum_threshold_exit_time(params: ModelParams, s: Statistic, eta: float) -> float:
    """First nonnegative time at which the no-arrival flow satisfies ``phi0 + phi1 >= eta``.

    Returns 0.0 if the state already satisfies the inequality and ``inf`` when
    the flow never reaches the level (possible only when the disorder rate is
    below 1, where both coordinates mean-revert).  The crossing, when it
    exists, is bracketed using the closed-form crest of the coordinate sum and
    refined by bisection to absolute tolerance 1e-10.
    """
    x0, y0 = s.phi0, s.phi1
    if x0 + y0 >= eta:
        return 0.0
    lam = params.lam

    def total(t):
        x, y = flow_xy(params, t, x0, y0)
        return float(x + y)

    if lam >= 1.0 - BRANCH_TOL:
        # The first coordinate grows without bound, so the sum eventually
        # exceeds any level; bracket by doubling, then bisect (the sum crosses
        # the level exactly once while still below it).
        hi = 1.0 / (lam + params.mu)
        while total(hi) < eta:
            hi *= 2.0
            if hi > 1e12:  # pragma: no cover - defensive
                return math.inf
        return _bisect_crossing(total, 0.0, hi, eta)

    mrp = mean_reversion_point(params)
    m_sum = mrp.total
    c1 = (lam - 1.0) * (x0 - mrp.phi0)
    c2 = (lam - 2.0) * (y0 - mrp.phi1)
    rate0 = c1 + c2  # sum drift at t = 0
    if rate0 <= 0.0:
        # Falling now; it can turn around at most once, after which it climbs
        # monotonically toward the fixed-point level.
        if m_sum > eta:
            hi = 1.0
            while total(hi) < eta:
                hi *= 2.0
                if hi > 1e12:  # pragma: no cover - defensive
                    return math.inf
            return _bisect_crossing(total, 0.0, hi, eta)
        return math.inf
    # Rising now.  If the trajectory never meets the zero-drift line the sum
    # climbs straight to the fixed-point level; otherwise it crests where the
    # drift vanishes and falls back afterwards.
    if c1 < 0.0:
        t_crest = math.log(c2 / (-c1))
        if t_crest > 0.0 and total(t_crest) >= eta:
            return _bisect_crossing(total, 0.0, t_crest, eta)
        if t_crest <= 0.0 and m_sum > eta:
            hi = 1.0
            while total(hi) < eta:
                hi *= 2.0
            return _bisect_crossing(total, 0.0, hi, eta)
        return math.inf
    if m_sum > eta:
        hi = 1.0
        while total(hi) < eta:
            hi *= 2.0
        return _bisect_crossing(total, 0.0, hi, eta)
    return math.inf


def _bisect_crossing(total, lo: float, hi: float, eta: float) -> float:
    """Bisect for the first time ``total(t) >= eta`` inside a bracket with total(lo) < eta <= total(hi)."""
    while hi - lo > EXIT_TIME_TOL:
        mid = 0.5 * (lo + hi)
        if total(mid) >= eta:
            hi = mid
        else:
            lo = mid
    return hi


def deterministic_exit_time(params: ModelParams, s: Statistic) -> float:
    """First time the no-arrival flow leaves the advantage region (``inf`` if never)."""
    return sum_threshold_exit_time(params, s, params.cost_threshold)


@dataclass(frozen=True)
class RegionSpec:
    """Closed-form geometric data for the current parameter regime.

    ``corner`` is the meeting point of the zero-drift line with the boundary
    of the advantage region (defined in R4/R5); ``xi`` is the ordinate at
    which the backward flow from the corner hits the vertical axis, capping
    the polygonal continuation superset; ``mean_reversion`` is the flow fixed
    point for disorder rates below 1.
    """

    regime: RegimeClass
    corner: tuple[float, float] | None
    xi: float
    mean_reversion: tuple[float, float] | None


def region_spec(params: ModelParams) -> RegionSpec:
    """Compute the regime geometry: corner, backward-flow cap, and flow fixed point."""
    regime = classify_regime(params)
    lam, c, m = params.lam, params.c, params.m
    mrp = mean_reversion_point(params)
    mr = mrp.as_tuple() if mrp is not None else None
    if regime.tag not in ("R4", "R5"):
        return RegionSpec(regime, None, 0.0, mr)
    corner_x = lam * (-1.0 + (2.0 - lam) / c)
    corner_y = lam * (1.0 + (lam - 1.0) / c)
    t_star = _time_to_reach_from_origin(params, corner_x)
    ay, by = _y_coeffs(params, -t_star)
    xi = float(ay + by * corner_y)
    return RegionSpec(regime, (corner_x, corner_y), xi, mr)


def _time_to_reach_from_origin(params: ModelParams, x_target: float) -> float:
    """Closed-form solve of x(t, 0) = x_target for t >= 0."""
    lam, m = params.lam, params.m
    if abs(lam - 1.0) < BRANCH_TOL:
        return x_target / (2.0 - m)
    k = lam - 1.0
    # x(t, 0) = (lam (2-m) / k) * expm1(k t)
    arg = x_target * k / (lam * (2.0 - m))
    return math.log1p(arg) / k


def in_region(params: ModelParams, s: Statistic, which: str) -> bool:
    """Membership in one of the closed-form sets of the sample-path analysis.

    ``which`` is one of:

    * ``continuation_hull``: polygonal superset of the continuation region
      (R4/R5); the value function vanishes outside it.
    * ``stop_wedge``: immediate stopping is optimal here (R6): the
      discounted cost of never stopping is nonnegative and the state is
      outside the advantage region.
    * ``stop_halfplane``: the same half-plane test without the advantage
      condition (R7), where it bounds the optimal rule from above.
    * ``entrance_segment`` (R4), ``entrance_segment_slow`` (R5),
      ``exit_segment`` (R6): the exactly-known pieces of the free boundary on
      the advantage-region boundary line.
    * ``crest_wedge``: strip between the advantage region and the zero-drift
      line (R3), crossed only outward.

    Raises :class:`RegionUndefinedError` when the current regime does not
    define the region.
    """
    if which not in REGION_NAMES:
        raise RegionUndefinedError(f"unknown region {which!r}; expected one of {REGION_NAMES}")
    regime = classify_regime(params)
    allowed = _REGION_REGIMES[which]
    if regime.tag not in allowed:
        raise RegionUndefinedError(
            f"region {which!r} is defined only in regime(s) {', '.join(allowed)}; parameters are {regime.tag}")
    lam, c, m = params.lam, params.c, params.m
    level = params.cost_threshold
    if which == "continuation_hull":
        spec = region_spec(params)
        corner_x, _ = spec.corner
        if s.phi0 <= corner_x:
            return s.total <= spec.xi
        return s.total <= level
    if which == "stop_wedge":
        return (s.phi0 + 0.5 * s.phi1 + 1.5 - 0.5 * m - 1.0 / c >= 0.0) and (s.total >= level)
    if which == "stop_halfplane":
        return s.phi0 + 0.5 * s.phi1 + 1.5 - 0.5 * m - 1.0 / c >= 0.0
    if which == "crest_wedge":
        return (s.total - level > 0.0) and (sum_drift(params, s) > 0.0)
    # Boundary-line segments: on the line within tolerance, below a regime cap.
    if abs(s.total - level) > LINE_TOL:
        return False
    if which == "entrance_segment":
        cap = lam * (1.0 + (lam - 1.0) / c)
    elif which == "entrance_segment_slow":
        cap = lam * (1.0 - (1.0 - lam) / c)
    else:  # exit_segment
        cap = 3.0 - m - 2.0 * (1.0 - lam) / c
    return s.phi1 <= cap + LINE_TOL


def discounted_flow_cost(params: ModelParams, x0, y0, tau, rho: float):
    """Exact value of the discounted running-cost integral along a no-arrival flow.

    Computes ``integral_0^tau exp(-rho u) (x(u,x0) + y(u,y0) - lam/c) du`` in
    closed form.  Accepts ndarray ``x0``, ``y0``, ``tau`` (broadcastable);
    ``tau`` may be ``inf`` when ``rho > 0``.
    """
    lam, m, c = params.lam, params.m, params.c
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    tau = np.asarray(tau, dtype=float)
    with np.errstate(invalid="ignore"):
        e_rho = np.where(np.isinf(tau), 0.0, np.exp(-rho * np.where(np.isinf(tau), 0.0, tau)))
    one_minus = 1.0 - e_rho

    def _coordinate_part(v0, k, growth_const):
        # integral of exp(-rho u) * (a_inf + (v0 - a_inf) e^{k u}) du with
        # a_inf = -growth_const / k; linear branch when k is (numerically) 0.
        if abs(k) < BRANCH_TOL:
            # coordinate moves linearly: v0 + growth_const * u
            with np.errstate(invalid="ignore"):
                lin_tail = np.where(np.isinf(tau), 0.0,
                                    np.exp(-rho * np.where(np.isinf(tau), 0.0, tau))
                                    * (1.0 + rho * np.where(np.isinf(tau), 0.0, tau)))
            return v0 * one_minus / rho + growth_const * (1.0 - lin_tail) / rho**2
        a_inf = -growth_const / k
        decay = rho - k
        with np.errstate(invalid="ignore"):
            e_dec = np.where(np.isinf(tau), 0.0, np.exp(-decay * np.where(np.isinf(tau), 0.0, tau)))
        return a_inf * one_minus / rho + (v0 - a_inf) * (1.0 - e_dec) / decay

    part_x = _coordinate_part(x0, lam - 1.0, lam * (2.0 - m))
    part_y = _coordinate_part(y0, lam - 2.0, lam * (m - 1.0))
    out = part_x + part_y - (lam / c) * one_minus / rho
    if out.ndim == 0:
        return float(out)
    return out
