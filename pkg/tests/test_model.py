"""Parameter validation, mark models, regime classification."""

from __future__ import annotations

import math

import numpy as np
import pytest

import cpdisorder as cp
from cpdisorder import InvalidParamsError, MarkSupportError

from conftest import random_params


class TestValidateParams:
    def test_valid_interior(self):
        p = cp.validate_params({"lambda": 1, "c": 1, "mu": 1, "m": 1.5, "pi": 0})
        assert p.lam == 1.0 and p.marks == cp.DegenerateMarks()

    def test_m_endpoint_rejected(self):
        with pytest.raises(InvalidParamsError, match="m must lie strictly"):
            cp.validate_params({"lambda": 1, "c": 1, "mu": 1, "m": 2.0, "pi": 0})

    def test_prior_mass_one_rejected(self):
        with pytest.raises(InvalidParamsError, match="pi"):
            cp.validate_params({"lambda": 1, "c": 1, "mu": 1, "m": 1.5, "pi": 1})

    def test_all_violations_reported(self):
        with pytest.raises(InvalidParamsError) as err:
            cp.validate_params({"lambda": -1, "c": 0, "mu": 1, "m": 3.0, "pi": 2})
        assert len(err.value.violations) >= 4

    def test_nonpositive_rates_rejected(self):
        for key in ("lambda", "c", "mu"):
            raw = {"lambda": 1, "c": 1, "mu": 1, "m": 1.5}
            raw[key] = 0.0
            with pytest.raises(InvalidParamsError):
                cp.validate_params(raw)

    def test_zero_baseline_mass_rejected(self):
        marks = {"variant": "finite_discrete", "values": [1, 2], "p0": [1.0, 0.0], "p1": [0.5, 0.5]}
        with pytest.raises(InvalidParamsError):
            cp.validate_params({"lambda": 1, "c": 1, "mu": 1, "m": 1.5, "marks": marks})

    def test_prob_sums_checked(self):
        marks = {"variant": "finite_discrete", "values": [1, 2], "p0": [0.6, 0.6], "p1": [0.5, 0.5]}
        with pytest.raises(InvalidParamsError, match="sum to 1"):
            cp.validate_params({"lambda": 1, "c": 1, "mu": 1, "m": 1.5, "marks": marks})

    def test_atom_probabilities_derived(self):
        p = cp.ModelParams(lam=1.0, c=1.0, mu=1.0, m=1.5)
        assert 0 < p.p_up_one < 1 and 0 < p.p_up_two < 1
        assert p.p_up_one + p.p_up_two == pytest.approx(1.0)


class TestLikelihoodRatio:
    def test_degenerate_is_one(self):
        assert cp.likelihood_ratio(cp.DegenerateMarks(), 3.7) == 1.0

    def test_exponential_pair_at_zero(self):
        # density ratio (a1/a0) exp(-(a1-a0) y) evaluated analytically at 0
        assert cp.likelihood_ratio(cp.ExponentialPairMarks(1.0, 2.0), 0.0) == pytest.approx(2.0)

    def test_finite_discrete_ratio(self):
        marks = cp.FiniteDiscreteMarks((1.0, 2.0), (0.5, 0.5), (0.25, 0.75))
        assert cp.likelihood_ratio(marks, 2.0) == pytest.approx(1.5)

    def test_out_of_support_raises(self):
        marks = cp.FiniteDiscreteMarks((1.0, 2.0), (0.5, 0.5), (0.25, 0.75))
        with pytest.raises(MarkSupportError):
            cp.likelihood_ratio(marks, 1.5)
        with pytest.raises(MarkSupportError):
            cp.likelihood_ratio(cp.ExponentialPairMarks(1.0, 2.0), -0.1)

    def test_integrates_to_one_finite(self):
        marks = cp.FiniteDiscreteMarks((0.5, 1.0, 4.0), (0.2, 0.5, 0.3), (0.4, 0.1, 0.5))
        total = sum(p0 * cp.likelihood_ratio(marks, y) for y, p0 in zip(marks.values, marks.p0))
        assert total == pytest.approx(1.0, abs=1e-14)

    def test_integrates_to_one_exponential(self):
        marks = cp.ExponentialPairMarks(1.3, 0.7)
        ys = np.linspace(0.0, 60.0, 2_000_001)
        density = marks.a0 * np.exp(-marks.a0 * ys)
        vals = cp.likelihood_ratio(marks, ys) * density
        assert np.trapezoid(vals, ys) == pytest.approx(1.0, abs=1e-8)


class TestRegimes:
    def test_r1_any_c(self):
        assert cp.classify_regime(cp.ModelParams(lam=2.5, c=0.01, mu=1, m=1.5)).tag == "R1"
        assert cp.classify_regime(cp.ModelParams(lam=2.5, c=10.0, mu=1, m=1.5)).tag == "R1"

    def test_r4_example(self):
        reg = cp.classify_regime(cp.ModelParams(lam=1.5, c=0.25, mu=1, m=1.5))
        assert reg.tag == "R4"
        assert reg.xi == pytest.approx(1.5 * (-1 + 0.5 / 0.25))

    def test_r7_example(self):
        reg = cp.classify_regime(cp.ModelParams(lam=0.5, c=0.2, mu=1, m=1.5))
        assert reg.tag == "R7"
        assert reg.xi is None

    def test_boundary_ties(self):
        # c exactly at a regime threshold resolves toward the stronger conclusion
        assert cp.classify_regime(cp.ModelParams(lam=1.5, c=0.5, mu=1, m=1.5)).tag == "R2"
        lam, m = 0.5, 1.5
        c_mid = (2 - lam) * (1 - lam) / (3 - lam - m)
        c_low = 2 * (1 - lam) / (3 - m)
        assert cp.classify_regime(cp.ModelParams(lam=lam, c=c_mid, mu=1, m=m)).tag == "R6"
        assert cp.classify_regime(cp.ModelParams(lam=lam, c=c_low, mu=1, m=m)).tag == "R6"

    def test_partition_of_parameter_space(self):
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            p = random_params(rng)
            reg = cp.classify_regime(p)
            lam, c, m = p.lam, p.c, p.m
            tags = []
            if lam >= 2:
                tags.append("R1")
            if 1 <= lam < 2 and c >= 2 - lam:
                tags.append("R2")
            if 0 < lam < 1 and c >= max(2 - lam, 1 - lam):
                tags.append("R3")
            if 1 <= lam < 2 and c < 2 - lam:
                tags.append("R4")
            if 0 < lam < 1 and (2 - lam) * (1 - lam) / (3 - lam - m) < c < max(2 - lam, 1 - lam):
                tags.append("R5")
            if 0 < lam < 1 and 2 * (1 - lam) / (3 - m) <= c <= (2 - lam) * (1 - lam) / (3 - lam - m):
                tags.append("R6")
            if 0 < lam < 1 and c < 2 * (1 - lam) / (3 - m):
                tags.append("R7")
            assert reg.tag in tags
            assert len(tags) == 1

    def test_corner_below_threshold_r4_r5(self):
        rng = np.random.default_rng(1)
        seen = 0
        while seen < 200:
            p = random_params(rng)
            reg = cp.classify_regime(p)
            if reg.tag in ("R4", "R5"):
                assert reg.xi < p.cost_threshold
                seen += 1


class TestInitialStatistic:
    def test_zero_prior(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5, pi=0.0)
        assert cp.initial_statistic(p) == cp.Statistic(0.0, 0.0)

    def test_half_prior(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.5, pi=0.5)
        s = cp.initial_statistic(p)
        assert s.phi0 == pytest.approx(0.5) and s.phi1 == pytest.approx(0.5)

    def test_skewed_moment(self):
        p = cp.ModelParams(lam=1, c=1, mu=1, m=1.9, pi=0.5)
        s = cp.initial_statistic(p)
        assert s.phi0 == pytest.approx(0.1) and s.phi1 == pytest.approx(0.9)


def test_params_json_roundtrip(tmp_path):
    p = cp.ModelParams(lam=1.2, c=0.4, mu=0.8, m=1.7, pi=0.25,
                       marks=cp.ExponentialPairMarks(1.0, 2.0))
    path = tmp_path / "params.json"
    import json

    path.write_text(json.dumps(p.to_dict()))
    q = cp.load_params(str(path))
    assert q == p
