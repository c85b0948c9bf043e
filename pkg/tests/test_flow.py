"""Closed-form flow, jump map, exit times, and region geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest

import cpdisorder as cp
from cpdisorder import RegionUndefinedError
from cpdisorder.model import Statistic

from conftest import random_params


class TestFlow:
    def test_identity_at_zero(self):
        p = cp.ModelParams(lam=1.7, c=1, mu=1, m=1.4)
        s = Statistic(0.3, 2.1)
        assert cp.flow(p, 0.0, s) == s

    def test_linear_branch(self):
        p = cp.ModelParams(lam=1.0, c=1, mu=1, m=1.5)
        s = cp.flow(p, 2.0, Statistic(1.0, 0.0))
        assert s.phi0 == pytest.approx(1.0 + 0.5 * 2.0)

    def test_mean_reversion_limit(self):
        p = cp.ModelParams(lam=0.5, c=1, mu=1, m=1.5)
        far = cp.flow(p, 200.0, Statistic(3.0, 7.0))
        assert far.phi0 == pytest.approx(0.5, abs=1e-12)
        assert far.phi1 == pytest.approx(1.0 / 6.0, abs=1e-12)
        m = cp.mean_reversion_point(p)
        assert (m.phi0, m.phi1) == (pytest.approx(0.5), pytest.approx(1 / 6))

    def test_semigroup(self):
        # composed over signed times, including backward legs
        rng = np.random.default_rng(5)
        for _ in range(300):
            p = random_params(rng)
            x0, y0 = rng.uniform(0, 5), rng.uniform(0, 5)
            t, u = rng.uniform(-5, 5), rng.uniform(-5, 5)
            x1, y1 = cp.flow_xy(p, t + u, x0, y0)
            xm, ym = cp.flow_xy(p, t, x0, y0)
            x2, y2 = cp.flow_xy(p, u, xm, ym)
            assert float(x1) == pytest.approx(float(x2), rel=1e-11, abs=1e-11)
            assert float(y1) == pytest.approx(float(y2), rel=1e-11, abs=1e-11)

    def test_branch_continuity(self):
        for lam in (1.0 - 1e-9, 1.0 + 1e-9):
            p_near = cp.ModelParams(lam=lam, c=1, mu=1, m=1.5)
            p_at = cp.ModelParams(lam=1.0, c=1, mu=1, m=1.5)
            for t in (0.3, 2.0, 4.5):
                a = cp.flow(p_near, t, Statistic(1.2, 0.7))
                b = cp.flow(p_at, t, Statistic(1.2, 0.7))
                assert a.phi0 == pytest.approx(b.phi0, abs=1e-6)
                assert a.phi1 == pytest.approx(b.phi1, abs=1e-6)

    def test_flows_never_cross(self):
        # the flow is affine in its start point with positive coefficient, so
        # coordinatewise order is preserved exactly
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = random_params(rng)
            a = Statistic(rng.uniform(0, 4), rng.uniform(0, 4))
            b = Statistic(a.phi0 + rng.uniform(1e-6, 1), a.phi1 + rng.uniform(1e-6, 1))
            for t in np.linspace(0.0, 5.0, 11):
                fa, fb = cp.flow(p, float(t), a), cp.flow(p, float(t), b)
                assert fb.phi0 > fa.phi0 and fb.phi1 > fa.phi1


class TestDrift:
    def test_origin_at_lam2(self):
        p = cp.ModelParams(lam=2.0, c=1, mu=1, m=1.5)
        assert cp.drift(p, Statistic(0, 0)) == (pytest.approx(1.0), pytest.approx(1.0))

    def test_unit_rate_kills_phi0_term(self):
        p = cp.ModelParams(lam=1.0, c=1, mu=1, m=1.5)
        assert cp.drift(p, Statistic(7.0, 0.0)) == (pytest.approx(0.5), pytest.approx(0.5))

    def test_matches_flow_derivative(self):
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(200):
            p = random_params(rng)
            s = Statistic(rng.uniform(0, 4), rng.uniform(0, 4))
            up = cp.flow(p, h, s)
            dn = cp.flow(p, -h, s)
            fd0 = (up.phi0 - dn.phi0) / (2 * h)
            fd1 = (up.phi1 - dn.phi1) / (2 * h)
            d0, d1 = cp.drift(p, s)
            assert fd0 == pytest.approx(d0, rel=1e-6, abs=1e-5)
            assert fd1 == pytest.approx(d1, rel=1e-6, abs=1e-5)

    def test_sum_drift_is_flow_sum_derivative(self):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(100):
            p = random_params(rng)
            s = Statistic(rng.uniform(0, 4), rng.uniform(0, 4))
            up, dn = cp.flow(p, h, s), cp.flow(p, -h, s)
            fd = (up.total - dn.total) / (2 * h)
            assert fd == pytest.approx(cp.sum_drift(p, s), rel=1e-6, abs=1e-5)


class TestJumpUpdate:
    def test_plain_factors(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5)
        out = cp.jump_update(p, p.marks, Statistic(1, 1), 1.0)
        assert (out.phi0, out.phi1) == (pytest.approx(2.0), pytest.approx(3.0))

    def test_mu_two(self):
        p = cp.ModelParams(lam=1, c=1, mu=2, m=1.5)
        out = cp.jump_update(p, p.marks, Statistic(4, 2), 1.0)
        assert (out.phi0, out.phi1) == (pytest.approx(6.0), pytest.approx(4.0))

    def test_origin_fixed(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5)
        assert cp.jump_update(p, p.marks, Statistic(0, 0), 1.0) == Statistic(0, 0)

    def test_upward_when_ratio_at_least_one(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            p = random_params(rng)
            s = Statistic(rng.uniform(0.1, 4), rng.uniform(0.1, 4))
            out = cp.jump_update(p, p.marks, s, 1.0)
            assert out.phi0 > s.phi0 and out.phi1 > s.phi1

    def test_keeps_outside_advantage_region(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            p = random_params(rng)
            level = p.cost_threshold
            frac = rng.uniform(0, 1)
            s = Statistic(level * frac * 1.2, level * (1 - frac) * 1.2)
            assert not cp.in_advantageous_region(p, s)
            assert not cp.in_advantageous_region(p, cp.jump_update(p, p.marks, s, 1.0))


class TestSumDriftLine:
    def test_intercept_at_lam_1_5(self):
        p = cp.ModelParams(lam=1.5, c=1, mu=1, m=1.5)
        assert cp.sum_drift(p, Statistic(0.0, 3.0)) == pytest.approx(0.0)

    def test_mean_reversion_point_on_line(self):
        p = cp.ModelParams(lam=0.5, c=1, mu=1, m=1.5)
        m = cp.mean_reversion_point(p)
        assert cp.sum_drift(p, m) == pytest.approx(0.0, abs=1e-14)

    def test_constant_term(self):
        p = cp.ModelParams(lam=2.0, c=1, mu=1, m=1.5)
        assert cp.sum_drift(p, Statistic(0, 0)) == pytest.approx(2.0)


class TestAdvantageRegion:
    def test_origin_inside(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5)
        assert cp.in_advantageous_region(p, Statistic(0, 0))

    def test_boundary_counts_inside(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5)
        assert cp.in_advantageous_region(p, Statistic(0.5, 0.5))

    def test_outside(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5)
        assert not cp.in_advantageous_region(p, Statistic(1.0, 1.0))


class TestExitTime:
    def test_already_outside(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5)
        assert cp.deterministic_exit_time(p, Statistic(2, 2)) == 0.0

    def test_lam2_closed_form(self):
        # exp(t) - 1 + t = 2 at t ~ 0.79206
        p = cp.ModelParams(lam=2.0, c=1.0, mu=1.0, m=1.5)
        t = cp.deterministic_exit_time(p, Statistic(0, 0))
        assert math.exp(t) - 1.0 + t == pytest.approx(2.0, abs=1e-9)
        assert t == pytest.approx(0.79206, abs=1e-5)

    def test_fixed_point_never_exits(self):
        p = cp.ModelParams(lam=0.5, c=0.1, mu=1, m=1.5)
        m = cp.mean_reversion_point(p)
        assert m.total < p.cost_threshold
        assert cp.deterministic_exit_time(p, m) == math.inf

    def test_fixed_point_outside_exits_at_zero(self):
        p = cp.ModelParams(lam=0.5, c=10.0, mu=1, m=1.5)
        m = cp.mean_reversion_point(p)
        assert m.total >= p.cost_threshold
        assert cp.deterministic_exit_time(p, m) == 0.0

    def test_crest_below_level_never_exits(self):
        p = cp.ModelParams(lam=0.5, c=0.05, mu=1, m=1.5)
        # far from the level, mean reversion keeps the sum capped
        assert cp.deterministic_exit_time(p, Statistic(0.1, 0.1)) == math.inf

    def test_crossing_is_exact(self):
        rng = np.random.default_rng(8)
        count = 0
        while count < 200:
            p = random_params(rng)
            s = Statistic(rng.uniform(0, 2), rng.uniform(0, 2))
            t = cp.deterministic_exit_time(p, s)
            if not math.isfinite(t) or t == 0.0:
                continue
            at = cp.flow(p, t, s)
            assert at.total == pytest.approx(p.cost_threshold, abs=1e-7)
            before = cp.flow(p, max(t - 1e-6, 0.0), s)
            assert before.total < p.cost_threshold + 1e-12
            count += 1


class TestRegionSpec:
    def test_r4_corner(self):
        p = cp.ModelParams(lam=1.5, c=0.25, mu=1, m=1.5)
        spec = cp.region_spec(p)
        assert spec.corner == (pytest.approx(1.5), pytest.approx(4.5))
        assert spec.corner[0] + spec.corner[1] == pytest.approx(p.cost_threshold)
        # backward flow from the corner reaches the vertical axis at the hull cap
        assert spec.xi == pytest.approx(7.5)

    def test_corner_on_zero_drift_line(self):
        p = cp.ModelParams(lam=1.5, c=0.25, mu=1, m=1.5)
        spec = cp.region_spec(p)
        assert cp.sum_drift(p, Statistic(*spec.corner)) == pytest.approx(0.0, abs=1e-12)

    def test_r5_mean_reversion(self):
        p = cp.ModelParams(lam=0.5, c=0.9, mu=1, m=1.5)
        assert cp.classify_regime(p).tag == "R5"
        spec = cp.region_spec(p)
        assert spec.mean_reversion == (pytest.approx(0.5), pytest.approx(1 / 6))
        assert spec.corner is not None

    def test_r1_no_corner(self):
        p = cp.ModelParams(lam=2.5, c=1, mu=1, m=1.5)
        spec = cp.region_spec(p)
        assert spec.corner is None and spec.xi == 0.0

    def test_backward_consistency(self):
        # flowing forward from (0, xi) for the solved time lands on the corner
        p = cp.ModelParams(lam=1.5, c=0.25, mu=1, m=1.5)
        spec = cp.region_spec(p)
        t = np.linspace(0, 10, 2001)
        xs, ys = cp.flow_xy(p, t, 0.0, spec.xi)
        k = int(np.argmin(np.abs(xs - spec.corner[0])))
        assert ys[k] == pytest.approx(spec.corner[1], abs=2e-2)


class TestRegions:
    def test_stop_wedge_example(self):
        p = cp.ModelParams(lam=0.65, c=0.5, mu=1, m=1.5)
        assert cp.classify_regime(p).tag == "R6"
        # 2 + 0.5 + 1.5 - 0.75 - 2 = 1.25 >= 0 and sum above lam/c
        assert cp.in_region(p, Statistic(2.0, 1.0), "stop_wedge")
        assert not cp.in_region(p, Statistic(0.1, 0.2), "stop_wedge")

    def test_entrance_segment_example(self):
        p = cp.ModelParams(lam=1.5, c=0.25, mu=1, m=1.5)
        assert cp.in_region(p, Statistic(2.0, 4.0), "entrance_segment")
        assert not cp.in_region(p, Statistic(1.0, 5.0), "entrance_segment")  # phi1 above cap
        assert not cp.in_region(p, Statistic(2.0, 4.5), "entrance_segment")  # off the line

    def test_region_gated_by_regime(self):
        p = cp.ModelParams(lam=2.5, c=1, mu=1, m=1.5)
        with pytest.raises(RegionUndefinedError, match="R4, R5"):
            cp.in_region(p, Statistic(1, 1), "continuation_hull")

    def test_hull_membership(self):
        p = cp.ModelParams(lam=1.5, c=0.25, mu=1, m=1.5)
        assert cp.in_region(p, Statistic(0.5, 6.5), "continuation_hull")  # sum 7 <= 7.5 cap
        assert not cp.in_region(p, Statistic(0.5, 7.5), "continuation_hull")
        assert cp.in_region(p, Statistic(2.0, 3.9), "continuation_hull")  # right lobe, sum < 6
        assert not cp.in_region(p, Statistic(2.0, 4.5), "continuation_hull")

    def test_stop_halfplane_r7(self):
        p = cp.ModelParams(lam=0.5, c=0.2, mu=1, m=1.5)
        # phi0 + phi1/2 >= 1/c - 3/2 + m/2 = 4.25
        assert cp.in_region(p, Statistic(4.0, 1.0), "stop_halfplane")
        assert not cp.in_region(p, Statistic(3.0, 1.0), "stop_halfplane")

    def test_crest_wedge_r3(self):
        p = cp.ModelParams(lam=0.5, c=1.6, mu=1, m=1.5)
        level = p.cost_threshold  # 0.3125
        s = Statistic(0.4, 0.05)  # above the level, below the zero-drift line
        assert cp.sum_drift(p, s) > 0
        assert cp.in_region(p, s, "crest_wedge")
        assert not cp.in_region(p, Statistic(0.1, 0.1), "crest_wedge")


class TestDiscountedFlowCost:
    def test_matches_quadrature(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            p = random_params(rng)
            x0, y0 = rng.uniform(0, 3), rng.uniform(0, 3)
            tau = rng.uniform(0.1, 4.0)
            rho = p.lam + rng.uniform(0, 2)
            ts = np.linspace(0, tau, 20001)
            xs, ys = cp.flow_xy(p, ts, x0, y0)
            integrand = np.exp(-rho * ts) * (xs + ys - p.cost_threshold)
            oracle = np.trapezoid(integrand, ts)
            val = cp.discounted_flow_cost(p, x0, y0, tau, rho)
            assert val == pytest.approx(oracle, rel=1e-6, abs=1e-8)

    def test_infinite_horizon_stop_wedge_identity(self):
        # the discounted integral to infinity reduces to the linear form used
        # by the immediate-stop regions
        rng = np.random.default_rng(13)
        for _ in range(50):
            lam = rng.uniform(0.05, 0.95)
            m = rng.uniform(1.05, 1.95)
            p = cp.ModelParams(lam=lam, c=float(rng.uniform(0.1, 2.0)), mu=1.0, m=m)
            x0, y0 = rng.uniform(0, 4), rng.uniform(0, 4)
            closed = x0 + 0.5 * y0 + 1.5 - 0.5 * m - 1.0 / p.c
            val = cp.discounted_flow_cost(p, x0, y0, math.inf, p.lam)
            assert val == pytest.approx(closed, rel=1e-10, abs=1e-10)
