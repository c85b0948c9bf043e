"""Stopping rules over filtered paths and seeded Bayes-risk estimation.

Rules are evaluated pathwise: inside each inter-arrival segment the filtered
state moves along the closed-form flow, so a rule can trigger either
continuously (the flow crosses its stop set) or at an arrival (the jump lands
inside the stop set).  Both trigger kinds are detected exactly for linear
threshold rules and by step-scan plus bisection for grid-based rules.

Risk is estimated two independent ways: under the physical law by averaging
false-alarm indicators plus delay costs against the hidden change time, and
under the reference law by integrating the discounted running cost along the
filtered trajectory up to the stopping time.  Agreement of the two estimators
is itself a correctness check of the whole stack.

All Monte Carlo work is deterministic given the master seed: per-path streams
are keyed by replication index, and aggregation is order-independent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InvalidParamsError
from .flow import _x_coeffs, _y_coeffs, discounted_flow_cost, mean_reversion_point
from .model import MarkModel, ModelParams, Statistic, initial_statistic, likelihood_ratio, params_digest
from .filtering import Trajectory
from .simulate import PathBatch, sample_batch
from .solve import DEFAULT_EPSILON_FACTOR, ValueGrid, _interp_core

_BRANCH_TOL = 1e-12


@dataclass(frozen=True)
class ImmediateStop:
    """Stop at time zero."""

    def label(self) -> str:
        return "immediate"


@dataclass(frozen=True)
class AdvantageExitStop:
    """Stop the first time the coordinate sum reaches ``lam / c`` (exit of the advantage region)."""

    def label(self) -> str:
        return "advantage-exit"


@dataclass(frozen=True)
class PosteriorThresholdStop:
    """Stop when the change posterior reaches ``p_star`` (a non-optimal comparator)."""

    p_star: float

    def __post_init__(self):
        if not (0.0 < self.p_star < 1.0):
            raise InvalidParamsError(["posterior threshold must lie in (0, 1)"])

    def label(self) -> str:
        return f"posterior>={self.p_star}"


@dataclass(frozen=True)
class GridBoundaryStop:
    """Stop when the interpolated solved value reaches ``-epsilon_level``."""

    grid: ValueGrid
    epsilon_level: float | None = None

    def label(self) -> str:
        return f"grid-boundary[n={self.grid.iteration}]"


@dataclass(frozen=True)
class StagedLadderStop:
    """Stage-indexed rule built from the value-iteration ladder.

    With ``n`` grids: before the first arrival stop on reaching the zero set
    of iterate ``n``; after each arrival move one rung down; after the
    ``(n-1)``-th arrival stop at the earlier of reaching the zero set of
    iterate 1 and the next arrival.
    """

    grids: tuple[ValueGrid, ...]
    epsilon_level: float | None = None

    def __post_init__(self):
        if len(self.grids) == 0:
            raise InvalidParamsError(["staged rule needs at least one grid"])

    def label(self) -> str:
        return f"staged[n={len(self.grids)}]"


PolicySpec = Union[ImmediateStop, AdvantageExitStop, PosteriorThresholdStop,
                   GridBoundaryStop, StagedLadderStop]


@dataclass(frozen=True)
class _SumLevelStop:
    """Internal rule: stop when the coordinate sum reaches an arbitrary level."""

    eta: float

    def label(self) -> str:
        return f"sum>={self.eta}"


@dataclass(frozen=True)
class StopOutcome:
    """Stopping time of one path; ``censored`` means the rule never fired before the horizon."""

    time: float
    censored: bool
    at_jump: bool


@dataclass(frozen=True)
class RiskEstimate:
    """Monte Carlo Bayes-risk figure with replication metadata.

    ``false_alarm_rate`` and ``mean_delay`` are populated only by the
    physical-measure estimator; the reference-measure estimator works through
    the discounted-cost identity and has no per-path alarm/delay split.
    """

    estimate: float
    stderr: float
    n_paths: int
    false_alarm_rate: float | None
    mean_delay: float | None
    censored_fraction: float
    measure: str

    def to_dict(self, policy: PolicySpec, params: ModelParams, horizon: float, seed: int) -> dict:
        return {
            "policy": policy.label(),
            "params_digest": params_digest(params),
            "n_paths": self.n_paths,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "false_alarm_rate": self.false_alarm_rate,
            "mean_delay": self.mean_delay,
            "censored_fraction": self.censored_fraction,
            "measure": self.measure,
            "horizon": horizon,
            "seed": seed,
        }


def _flow_at(params: ModelParams, t: np.ndarray, x0: np.ndarray, y0: np.ndarray):
    ax, bx = _x_coeffs(params, t)
    ay, by = _y_coeffs(params, t)
    return ax + bx * x0, ay + by * y0


def _sum_exit_time_vec(params: ModelParams, x0: np.ndarray, y0: np.ndarray,
                       eta: float) -> np.ndarray:
    """Vectorized first time the flow's coordinate sum reaches ``eta`` (``inf`` if never)."""
    n = x0.size
    out = np.full(n, np.inf)
    total0 = x0 + y0
    out[total0 >= eta] = 0.0
    todo = total0 < eta
    if not np.any(todo):
        return out
    lam = params.lam

    def totals(t, xs, ys):
        xt, yt = _flow_at(params, t, xs, ys)
        return xt + yt

    xs = x0[todo]
    ys = y0[todo]
    m = xs.size
    hi = np.full(m, np.nan)
    if lam >= 1.0 - _BRANCH_TOL:
        # unbounded growth: every path exits
        cur = np.full(m, 1.0 / (lam + params.mu))
        for _ in range(200):
            short = totals(cur, xs, ys) < eta
            if not np.any(short):
                break
            cur[short] *= 2.0
        hi = cur
        feasible = np.ones(m, dtype=bool)
    else:
        mrp = mean_reversion_point(params)
        m_sum = mrp.total
        c1 = (lam - 1.0) * (xs - mrp.phi0)
        c2 = (lam - 2.0) * (ys - mrp.phi1)
        rising = (c1 + c2) > 0.0
        cresting = rising & (c1 < 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_crest = np.where(cresting, np.log(np.where(cresting, c2 / np.where(c1 < 0, -c1, 1.0), 1.0)), np.inf)
        feasible = np.zeros(m, dtype=bool)
        # crest case: exits iff the crest value reaches the level
        crest_ok = cresting & (totals(np.where(cresting, t_crest, 0.0), xs, ys) >= eta)
        feasible |= crest_ok
        hi = np.where(crest_ok, t_crest, hi)
        # monotone approach to the fixed-point level
        mono = ~cresting & (m_sum > eta)
        if np.any(mono):
            cur = np.ones(m)
            for _ in range(200):
                short = mono & (totals(cur, xs, ys) < eta)
                if not np.any(short):
                    break
                cur[short] *= 2.0
            hi = np.where(mono, cur, hi)
            feasible |= mono
    lo = np.zeros(m)
    hi = np.where(feasible, hi, 1.0)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = totals(mid, xs, ys) >= eta
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    res = np.where(feasible, hi, np.inf)
    out[todo] = res
    return out


class _Kernel:
    """Vectorized stop condition and within-segment crossing for one rule."""

    n_stages = 0

    def condition(self, x, y, stage):
        raise NotImplementedError

    def crossing(self, x, y, dt, stage):
        raise NotImplementedError


class _AlwaysKernel(_Kernel):
    def condition(self, x, y, stage):
        return np.ones(x.shape, dtype=bool)

    def crossing(self, x, y, dt, stage):
        return np.zeros(x.shape)


class _ThresholdKernel(_Kernel):
    def __init__(self, params: ModelParams, eta: float):
        self.params = params
        self.eta = eta

    def condition(self, x, y, stage):
        return (x + y) >= self.eta

    def crossing(self, x, y, dt, stage):
        return _sum_exit_time_vec(self.params, x, y, self.eta)


class _GridKernel(_Kernel):
    def __init__(self, params: ModelParams, grids: Sequence[ValueGrid], eps: float,
                 staged: bool):
        self.params = params
        self.grids = list(grids)
        self.eps = eps
        self.n_stages = len(grids) if staged else 0
        self.staged = staged
        self.scan_step = self.grids[0].spec.time_step

    def _grid_for(self, stage: int) -> ValueGrid:
        return self.grids[stage - 1] if self.staged else self.grids[0]

    def condition(self, x, y, stage):
        out = np.zeros(x.shape, dtype=bool)
        for s in (np.unique(stage) if self.staged else [0]):
            mask = (stage == s) if self.staged else np.ones(x.shape, dtype=bool)
            g = self._grid_for(int(s))
            vals = _interp_core(g.values, g.spec.phi_max, x[mask], y[mask])
            out[mask] = vals >= -self.eps
        return out

    def crossing(self, x, y, dt, stage):
        out = np.full(x.shape, np.inf)
        for s in (np.unique(stage) if self.staged else [0]):
            mask = (stage == s) if self.staged else np.ones(x.shape, dtype=bool)
            g = self._grid_for(int(s))
            out[mask] = self._scan(g, x[mask], y[mask], dt[mask])
        return out

    def _scan(self, g: ValueGrid, x, y, dt):
        """Step at the quadrature step, then bisect the first bracket where the zero set is hit."""
        n = x.size
        res = np.full(n, np.inf)
        step = self.scan_step
        t_lo = np.zeros(n)
        active = np.arange(n)
        k = 1
        max_k = int(math.ceil(float(np.max(dt)) / step)) + 1 if n else 0
        while active.size and k <= max_k:
            t_try = np.minimum(k * step, dt[active])
            xa, ya = _flow_at(self.params, t_try, x[active], y[active])
            hit = _interp_core(g.values, g.spec.phi_max, xa, ya) >= -self.eps
            if np.any(hit):
                sel = active[hit]
                lo = t_lo[sel]
                hi = t_try[hit]
                for _ in range(50):
                    mid = 0.5 * (lo + hi)
                    xm, ym = _flow_at(self.params, mid, x[sel], y[sel])
                    inside = _interp_core(g.values, g.spec.phi_max, xm, ym) >= -self.eps
                    hi = np.where(inside, mid, hi)
                    lo = np.where(inside, lo, mid)
                res[sel] = hi
            t_lo[active] = t_try
            keep = ~hit & (t_try < dt[active])
            active = active[keep]
            k += 1
        return res


def _make_kernel(policy: PolicySpec, params: ModelParams) -> _Kernel:
    if isinstance(policy, ImmediateStop):
        return _AlwaysKernel()
    if isinstance(policy, _SumLevelStop):
        return _ThresholdKernel(params, policy.eta)
    if isinstance(policy, AdvantageExitStop):
        return _ThresholdKernel(params, params.cost_threshold)
    if isinstance(policy, PosteriorThresholdStop):
        return _ThresholdKernel(params, policy.p_star / (1.0 - policy.p_star))
    if isinstance(policy, GridBoundaryStop):
        eps = policy.epsilon_level if policy.epsilon_level is not None else DEFAULT_EPSILON_FACTOR / params.c
        return _GridKernel(params, [policy.grid], eps, staged=False)
    if isinstance(policy, StagedLadderStop):
        eps = policy.epsilon_level if policy.epsilon_level is not None else DEFAULT_EPSILON_FACTOR / params.c
        return _GridKernel(params, policy.grids, eps, staged=True)
    raise InvalidParamsError([f"unknown policy {type(policy).__name__}"])


def _run_policy_batch(policy: PolicySpec, params: ModelParams, marks: MarkModel,
                      batch: PathBatch, collect_integral: bool):
    """Apply one rule to every path of a batch.

    Returns ``(tau, censored, at_jump, integral)`` where ``integral`` is the
    discounted running-cost integral along the filtered trajectory up to the
    stopping time (``None`` unless requested).
    """
    kern = _make_kernel(policy, params)
    n = batch.n_paths
    init = initial_statistic(params)
    x = np.full(n, init.phi0)
    y = np.full(n, init.phi1)
    t0 = np.zeros(n)
    ptr = batch.offsets[:-1].astype(np.int64).copy()
    end_ptr = batch.offsets[1:]
    tau = np.full(n, batch.horizon)
    censored = np.zeros(n, dtype=bool)
    at_jump = np.zeros(n, dtype=bool)
    integral = np.zeros(n) if collect_integral else None
    stage = np.full(n, kern.n_stages, dtype=np.int64)

    stopped0 = kern.condition(x, y, stage)
    tau[stopped0] = 0.0
    idx = np.flatnonzero(~stopped0)
    lam = params.lam
    while idx.size:
        has_event = ptr[idx] < end_ptr[idx]
        if batch.times.size:
            safe_ptr = np.where(has_event, ptr[idx], 0)
            t_next = np.where(has_event, batch.times[safe_ptr], batch.horizon)
        else:
            t_next = np.full(idx.shape, batch.horizon)
        dt = t_next - t0[idx]
        tc = kern.crossing(x[idx], y[idx], dt, stage[idx])
        crossed = tc < dt
        ci = idx[crossed]
        if ci.size:
            tau[ci] = t0[ci] + tc[crossed]
            if collect_integral:
                integral[ci] += np.exp(-lam * t0[ci]) * discounted_flow_cost(
                    params, x[ci], y[ci], tc[crossed], lam)
        rest = ~crossed
        ri = idx[rest]
        if ri.size == 0:
            break
        if collect_integral:
            integral[ri] += np.exp(-lam * t0[ri]) * discounted_flow_cost(
                params, x[ri], y[ri], dt[rest], lam)
        ended = ~has_event[rest]
        ei = ri[ended]
        if ei.size:
            censored[ei] = True
            tau[ei] = batch.horizon
        ai = ri[~ended]
        if ai.size == 0:
            break
        dt_a = dt[rest][~ended]
        t_arr = t_next[rest][~ended]
        xa, ya = _flow_at(params, dt_a, x[ai], y[ai])
        mk = batch.marks[ptr[ai]]
        r = np.asarray(likelihood_ratio(marks, mk), dtype=float)
        x[ai] = (1.0 + 1.0 / params.mu) * r * xa
        y[ai] = (1.0 + 2.0 / params.mu) * r * ya
        t0[ai] = t_arr
        ptr[ai] += 1
        if kern.n_stages:
            stage[ai] -= 1
            forced = ai[stage[ai] == 0]
            if forced.size:
                tau[forced] = t0[forced]
                at_jump[forced] = True
            ai = ai[stage[ai] > 0]
        if ai.size:
            hit = kern.condition(x[ai], y[ai], stage[ai])
            hi = ai[hit]
            tau[hi] = t0[hi]
            at_jump[hi] = True
            idx = ai[~hit]
        else:
            idx = ai
    return tau, censored, at_jump, integral


def stopping_time(policy: PolicySpec, params: ModelParams, marks: MarkModel,
                  traj: Trajectory) -> StopOutcome:
    """First time the rule fires along one filtered trajectory (reference implementation).

    Checks the condition at each segment start (post-jump state), then looks
    for a continuous crossing inside the segment.  Returns a censoring marker
    when the rule never fires before the horizon.
    """
    kern = _make_kernel(policy, params)
    stage = kern.n_stages
    for k in range(traj.n_segments):
        t_start = float(traj.start_times[k])
        t_end = float(traj.end_times[k])
        xs = np.asarray([traj.anchors_phi0[k]])
        ys = np.asarray([traj.anchors_phi1[k]])
        if kern.n_stages and k > 0:
            stage -= 1
            if stage == 0:
                return StopOutcome(t_start, False, True)
        st = np.asarray([stage])
        if bool(kern.condition(xs, ys, st)[0]):
            return StopOutcome(t_start, False, k > 0)
        tc = float(kern.crossing(xs, ys, np.asarray([t_end - t_start]), st)[0])
        if tc < t_end - t_start:
            return StopOutcome(t_start + tc, False, False)
    return StopOutcome(traj.horizon, True, False)


def _censor_warning(censored: np.ndarray) -> float:
    frac = float(np.mean(censored))
    if frac > 1e-3:
        warnings.warn(f"censored fraction {frac:.4f} exceeds 0.1%; increase the horizon",
                      stacklevel=3)
    return frac


def bayes_risk_physical(policy: PolicySpec, params: ModelParams, marks: MarkModel,
                        horizon: float, n_paths: int, seed: int) -> RiskEstimate:
    """Bayes risk under the physical law: false-alarm frequency plus delay cost.

    Censored paths contribute no false alarm (stopping had not happened; had
    the horizon been longer the rule would have fired later still) and a
    delay counted up to the horizon; the censored fraction is reported.
    """
    batch = sample_batch(params, horizon, seed, n_paths, "physical")
    tau, censored, _, _ = _run_policy_batch(policy, params, marks, batch, False)
    theta = batch.theta
    fa = (~censored) & (tau < theta)
    delay = np.maximum(np.minimum(tau, horizon) - theta, 0.0)
    score = fa.astype(float) + params.c * delay
    stderr = float(np.std(score, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    return RiskEstimate(estimate=float(np.mean(score)), stderr=stderr, n_paths=n_paths,
                        false_alarm_rate=float(np.mean(fa)),
                        mean_delay=float(np.mean(delay)),
                        censored_fraction=_censor_warning(censored),
                        measure="physical")


def bayes_risk_reference(policy: PolicySpec, params: ModelParams, marks: MarkModel,
                         horizon: float, n_paths: int, seed: int) -> RiskEstimate:
    """Bayes risk via the reference-law identity: discounted running cost to the stopping time.

    No disorder is simulated; the risk is ``1 - pi`` plus the scaled mean of
    the pathwise discounted cost integral.  Must agree with the physical
    estimator within Monte Carlo error, which is the measure-change test.
    """
    batch = sample_batch(params, horizon, seed, n_paths, "reference")
    _, censored, _, integral = _run_policy_batch(policy, params, marks, batch, True)
    scale = params.c * (1.0 - params.pi)
    vals = (1.0 - params.pi) + scale * integral
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    return RiskEstimate(estimate=float(np.mean(vals)), stderr=stderr, n_paths=n_paths,
                        false_alarm_rate=None, mean_delay=None,
                        censored_fraction=_censor_warning(censored),
                        measure="reference")


@dataclass(frozen=True)
class HittingTimeCheck:
    """Observed mean hitting time of a sum level under the reference law, against its analytic cap."""

    mean: float
    stderr: float
    bound: float
    eta: float
    censored_fraction: float

    @property
    def satisfied(self) -> bool:
        return self.mean <= self.bound + 3.0 * self.stderr


def hitting_time_bound_check(params: ModelParams, marks: MarkModel, eta: float,
                             n_paths: int, seed: int,
                             horizon: float | None = None) -> HittingTimeCheck:
    """Monte Carlo mean of the first time the filtered sum reaches ``eta`` versus ``eta (2 + 1/mu)``.

    Meaningful when the level set ``{phi0 + phi1 >= eta}`` lies inside a
    closed-form stopping superset for the regime, so the hitting time bounds
    the optimal rule from above.
    """
    if horizon is None:
        horizon = max(50.0, 10.0 * eta * (2.0 + 1.0 / params.mu))
    batch = sample_batch(params, horizon, seed, n_paths, "reference")
    tau, censored, _, _ = _run_policy_batch(_SumLevelStop(eta), params, marks, batch, False)
    stderr = float(np.std(tau, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    return HittingTimeCheck(mean=float(np.mean(tau)), stderr=stderr,
                            bound=eta * (2.0 + 1.0 / params.mu), eta=eta,
                            censored_fraction=float(np.mean(censored)))


@dataclass(frozen=True)
class PolicyComparison:
    """Common-random-number comparison of several rules on one simulated batch."""

    labels: list[str]
    estimates: np.ndarray
    stderrs: np.ndarray
    diff: np.ndarray
    diff_stderr: np.ndarray
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "estimates": [float(v) for v in self.estimates],
            "stderrs": [float(v) for v in self.stderrs],
            "pairwise_diff": [[float(v) for v in row] for row in self.diff],
            "pairwise_diff_stderr": [[float(v) for v in row] for row in self.diff_stderr],
            "n_paths": self.n_paths,
        }


def compare_policies(policies: Sequence[PolicySpec], params: ModelParams, marks: MarkModel,
                     horizon: float, n_paths: int, seed: int,
                     measure: str = "physical") -> PolicyComparison:
    """Evaluate several rules on one shared batch of paths (common random numbers).

    Under the physical measure each path scores its alarm indicator plus
    delay cost; under the reference measure it scores the discounted-cost
    identity, whose pairwise differences are far less noisy (the policies
    share every path segment before their stopping times diverge).
    """
    batch = sample_batch(params, horizon, seed, n_paths, measure)
    theta = batch.theta
    scores = []
    for pol in policies:
        if measure == "physical":
            tau, censored, _, _ = _run_policy_batch(pol, params, marks, batch, False)
            fa = (~censored) & (tau < theta)
            delay = np.maximum(np.minimum(tau, horizon) - theta, 0.0)
            scores.append(fa.astype(float) + params.c * delay)
        else:
            _, _, _, integral = _run_policy_batch(pol, params, marks, batch, True)
            scores.append((1.0 - params.pi) + params.c * (1.0 - params.pi) * integral)
    mat = np.vstack(scores)
    est = mat.mean(axis=1)
    se = mat.std(axis=1, ddof=1) / math.sqrt(n_paths)
    k = len(policies)
    diff = np.zeros((k, k))
    diff_se = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            d = mat[a] - mat[b]
            diff[a, b] = d.mean()
            diff_se[a, b] = d.std(ddof=1) / math.sqrt(n_paths) if a != b else 0.0
    return PolicyComparison(labels=[p.label() for p in policies], estimates=est,
                            stderrs=se, diff=diff, diff_stderr=diff_se, n_paths=n_paths)
