"""Path generation: distributional checks, determinism, serialization."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

import cpdisorder as cp
from cpdisorder import InvalidParamsError, PathDataError


@pytest.fixture(scope="module")
def params():
    return cp.ModelParams(lam=1.0, c=1.0, mu=1.0, m=1.5, pi=0.2)


class TestReferenceLaw:
    def test_zero_horizon_rejected(self, params):
        with pytest.raises(InvalidParamsError):
            cp.sample_path_reference(params, 0.0, 1)

    def test_determinism(self, params):
        a = cp.sample_path_reference(params, 10.0, 123)
        b = cp.sample_path_reference(params, 10.0, 123)
        assert np.array_equal(a.arrivals, b.arrivals)
        assert np.array_equal(a.marks, b.marks)
        c2 = cp.sample_path_reference(params, 10.0, 124)
        assert not np.array_equal(a.arrivals, c2.arrivals)

    def test_hidden_fields_absent(self, params):
        rec = cp.sample_path_reference(params, 10.0, 1)
        assert rec.theta is None and rec.lambda_post is None

    def test_mean_arrival_count(self, params):
        counts = [cp.sample_path_reference(params, 10.0, 7, replication=i).n_events
                  for i in range(4000)]
        mean = float(np.mean(counts))
        se = float(np.std(counts) / math.sqrt(len(counts)))
        assert abs(mean - 10.0) < 3 * se + 1e-9
        assert abs(mean - 10.0) < 0.3

    def test_interarrival_ks(self, params):
        gaps = []
        for i in range(1500):
            rec = cp.sample_path_reference(params, 12.0, 99, replication=i)
            arr = np.concatenate([[0.0], rec.arrivals])
            gaps.extend(np.diff(arr)[:8])
        gaps = np.asarray(gaps[:10000])
        assert gaps.size == 10000
        res = stats.kstest(gaps, "expon", args=(0, 1.0 / params.mu))
        assert res.pvalue > 0.01


class TestPhysicalLaw:
    def test_zero_prior_disorder_positive(self):
        p = cp.ModelParams(lam=1.0, c=1.0, mu=1.0, m=1.5, pi=0.0)
        for i in range(50):
            rec = cp.sample_path_physical(p, 5.0, 3, replication=i)
            assert rec.theta > 0.0

    def test_prior_atom_frequency(self, params):
        hits = [cp.sample_path_physical(params, 5.0, 11, replication=i).theta == 0.0
                for i in range(20000)]
        freq = float(np.mean(hits))
        assert abs(freq - params.pi) < 3 * math.sqrt(params.pi * (1 - params.pi) / 20000)

    def test_rate_atom_frequency(self, params):
        ups = [cp.sample_path_physical(params, 5.0, 13, replication=i).lambda_post == params.mu + 2.0
               for i in range(20000)]
        freq = float(np.mean(ups))
        expect = params.m - 1.0
        assert abs(freq - expect) < 3 * math.sqrt(expect * (1 - expect) / 20000)

    def test_post_disorder_rate(self, params):
        # pooled exposure-weighted arrival rate after the change on up-two paths
        events = 0
        exposure = 0.0
        for i in range(4000):
            rec = cp.sample_path_physical(params, 20.0, 17, replication=i)
            if rec.lambda_post != params.mu + 2.0 or rec.theta >= 20.0:
                continue
            events += int(np.sum(rec.arrivals > rec.theta))
            exposure += 20.0 - rec.theta
        rate = events / exposure
        assert rate == pytest.approx(params.mu + 2.0, rel=0.02)

    def test_post_disorder_gaps_ks(self, params):
        gaps = []
        for i in range(4000):
            rec = cp.sample_path_physical(params, 30.0, 19, replication=i)
            if rec.lambda_post != params.mu + 1.0 or rec.theta >= 25.0:
                continue
            post = rec.arrivals[rec.arrivals > rec.theta]
            seq = np.concatenate([[rec.theta], post])
            gaps.extend(np.diff(seq)[:5])
        gaps = np.asarray(gaps[:10000])
        res = stats.kstest(gaps, "expon", args=(0, 1.0 / (params.mu + 1.0)))
        assert res.pvalue > 0.01

    def test_theta_tail_distribution(self, params):
        thetas = np.asarray([cp.sample_path_physical(params, 5.0, 23, replication=i).theta
                             for i in range(10000)])
        positive = thetas[thetas > 0]
        res = stats.kstest(positive, "expon", args=(0, 1.0 / params.lam))
        assert res.pvalue > 0.01


class TestStreamEvents:
    def test_empty_path_sentinel_only(self, params):
        rec = cp.PathRecord(horizon=1.0, arrivals=np.empty(0), marks=np.empty(0),
                            theta=None, lambda_post=None, seed=0)
        events = list(cp.stream_events(rec))
        assert events == [(1.0, None)]

    def test_two_events_then_sentinel(self, params):
        rec = cp.PathRecord(horizon=5.0, arrivals=np.asarray([1.0, 2.5]),
                            marks=np.asarray([1.0, 1.0]), theta=None, lambda_post=None, seed=0)
        events = list(cp.stream_events(rec))
        assert events[:2] == [(1.0, 1.0), (2.5, 1.0)]
        assert events[2] == (5.0, None)

    def test_corrupted_order_raises(self, params):
        rec = cp.PathRecord(horizon=5.0, arrivals=np.asarray([1.0, 2.5]),
                            marks=np.asarray([1.0, 1.0]), theta=None, lambda_post=None, seed=0)
        rec.arrivals[1] = 0.5  # corrupt in place, bypassing construction checks
        with pytest.raises(PathDataError):
            list(cp.stream_events(rec))


class TestRecordValidation:
    def test_decreasing_arrivals_rejected(self):
        with pytest.raises(PathDataError):
            cp.PathRecord(horizon=5.0, arrivals=np.asarray([2.0, 1.0]),
                          marks=np.asarray([1.0, 1.0]), theta=None, lambda_post=None, seed=0)

    def test_beyond_horizon_rejected(self):
        with pytest.raises(PathDataError):
            cp.PathRecord(horizon=1.0, arrivals=np.asarray([2.0]),
                          marks=np.asarray([1.0]), theta=None, lambda_post=None, seed=0)


class TestMarkSampling:
    def test_exponential_pair_marks(self):
        marks = cp.ExponentialPairMarks(2.0, 0.5)
        p = cp.ModelParams(lam=1.0, c=1.0, mu=2.0, m=1.5, pi=0.0, marks=marks)
        pre = []
        post = []
        for i in range(3000):
            rec = cp.sample_path_physical(p, 10.0, 31, replication=i)
            pre.extend(rec.marks[rec.arrivals <= rec.theta][:4])
            post.extend(rec.marks[rec.arrivals > rec.theta][:4])
        assert stats.kstest(np.asarray(pre), "expon", args=(0, 0.5)).pvalue > 0.01
        assert stats.kstest(np.asarray(post), "expon", args=(0, 2.0)).pvalue > 0.01

    def test_finite_discrete_marks(self):
        marks = cp.FiniteDiscreteMarks((1.0, 5.0), (0.7, 0.3), (0.2, 0.8))
        p = cp.ModelParams(lam=0.5, c=1.0, mu=1.0, m=1.5, pi=0.0, marks=marks)
        rec = cp.sample_path_reference(p, 4000.0, 37)
        freq = float(np.mean(rec.marks == 5.0))
        assert abs(freq - 0.3) < 3 * math.sqrt(0.3 * 0.7 / rec.n_events)


class TestBatch:
    def test_batch_matches_scalar(self, params):
        batch = cp.sample_batch(params, 8.0, 41, 16, "physical")
        for i in (0, 7, 15):
            rec = cp.sample_path_physical(params, 8.0, 41, replication=i)
            lo, hi = batch.offsets[i], batch.offsets[i + 1]
            assert np.array_equal(batch.times[lo:hi], rec.arrivals)
            assert np.array_equal(batch.marks[lo:hi], rec.marks)
            assert batch.theta[i] == rec.theta

    def test_reference_batch_has_nan_hidden(self, params):
        batch = cp.sample_batch(params, 8.0, 43, 4, "reference")
        assert np.all(np.isnan(batch.theta))


class TestJsonl:
    def test_roundtrip(self, params, tmp_path):
        recs = [cp.sample_path_physical(params, 6.0, 47, replication=i) for i in range(5)]
        recs += [cp.sample_path_reference(params, 6.0, 47, replication=i) for i in range(3)]
        path = tmp_path / "paths.jsonl"
        cp.write_paths_jsonl(recs, str(path))
        back = cp.read_paths_jsonl(str(path))
        assert len(back) == len(recs)
        for a, b in zip(recs, back):
            assert np.array_equal(a.arrivals, b.arrivals)
            assert np.array_equal(a.marks, b.marks)
            assert a.theta == b.theta and a.lambda_post == b.lambda_post

    def test_reference_serializes_null_hidden(self, params, tmp_path):
        import json

        rec = cp.sample_path_reference(params, 6.0, 53)
        path = tmp_path / "p.jsonl"
        cp.write_paths_jsonl([rec], str(path))
        raw = json.loads(path.read_text().strip())
        assert raw["theta"] is None and raw["lambda_post"] is None
