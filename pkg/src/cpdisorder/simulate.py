"""Seeded generation of observation paths, with and without a disorder.

Two laws are supported: the reference law, under which arrivals form a plain
compound Poisson process (rate ``mu``, baseline marks) with no change point,
and the physical law, under which the rate and mark distribution switch at a
hidden exponential time.

Reproducibility contract: every path is produced by a counter-based (Philox)
generator keyed by ``(master seed, replication index, stream purpose)``, so a
path can be regenerated bit-identically in isolation and batches are
independent of scheduling or chunk sizes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import InvalidParamsError, PathDataError
from .model import (
    DegenerateMarks,
    ExponentialPairMarks,
    FiniteDiscreteMarks,
    MarkModel,
    ModelParams,
)

_ROOT_ENTROPY = 0x9C0FFEE
_PURPOSE_REFERENCE = 1
_PURPOSE_PHYSICAL = 2

_CHUNK = 16


def _generator(master_seed: int, replication: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence((_ROOT_ENTROPY, int(master_seed), int(replication), purpose))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PathRecord:
    """One simulated observation path.

    ``theta`` and ``lambda_post`` are the hidden disorder time and
    post-disorder arrival rate; they are ``None`` for reference-law paths.
    ``seed`` is the replication identifier the path was generated under.
    """

    horizon: float
    arrivals: np.ndarray
    marks: np.ndarray
    theta: float | None
    lambda_post: float | None
    seed: int

    def __post_init__(self):
        if self.horizon <= 0.0 or not math.isfinite(self.horizon):
            raise InvalidParamsError(["horizon must be positive and finite"])
        arr = np.asarray(self.arrivals, dtype=float)
        if arr.ndim != 1 or np.asarray(self.marks).shape != arr.shape:
            raise PathDataError("arrivals and marks must be 1-d arrays of equal length")
        if arr.size and (np.any(np.diff(arr) <= 0.0) or arr[0] <= 0.0):
            raise PathDataError("arrival times must be strictly increasing and positive")
        if arr.size and arr[-1] > self.horizon:
            raise PathDataError("arrival times must not exceed the horizon")
        if self.theta is not None and self.theta < 0.0:
            raise PathDataError("disorder time must be nonnegative")

    @property
    def n_events(self) -> int:
        return int(np.asarray(self.arrivals).size)


def _draw_interarrivals(gen: np.random.Generator, rate: float, start: float, end: float) -> list[float]:
    """Arrival times of a Poisson(rate) stream on (start, end], drawn in fixed-size chunks."""
    out: list[float] = []
    t = start
    while True:
        gaps = gen.exponential(1.0 / rate, size=_CHUNK)
        for gap in gaps:
            t += gap
            if t > end:
                return out
            out.append(t)


def _draw_marks(gen: np.random.Generator, marks: MarkModel, n: int, post: bool) -> np.ndarray:
    if n == 0:
        return np.empty(0, dtype=float)
    if isinstance(marks, DegenerateMarks):
        return np.ones(n, dtype=float)
    if isinstance(marks, ExponentialPairMarks):
        rate = marks.a1 if post else marks.a0
        u = gen.uniform(size=n)
        return -np.log1p(-u) / rate
    if isinstance(marks, FiniteDiscreteMarks):
        probs = np.asarray(marks.p1 if post else marks.p0, dtype=float)
        edges = np.cumsum(probs)
        edges[-1] = 1.0  # guard the top edge against rounding
        u = gen.uniform(size=n)
        idx = np.searchsorted(edges, u, side="right")
        return np.asarray(marks.values, dtype=float)[idx]
    raise InvalidParamsError([f"unknown mark model {type(marks).__name__}"])


def sample_path_reference(params: ModelParams, horizon: float, seed: int,
                          replication: int = 0) -> PathRecord:
    """Simulate one path under the reference law (no disorder, baseline marks)."""
    if horizon <= 0.0:
        raise InvalidParamsError(["horizon must be positive"])
    gen = _generator(seed, replication, _PURPOSE_REFERENCE)
    arrivals = _draw_interarrivals(gen, params.mu, 0.0, horizon)
    marks = _draw_marks(gen, params.marks, len(arrivals), post=False)
    return PathRecord(horizon=horizon, arrivals=np.asarray(arrivals, dtype=float),
                      marks=marks, theta=None, lambda_post=None, seed=seed)


def sample_path_physical(params: ModelParams, horizon: float, seed: int,
                         replication: int = 0) -> PathRecord:
    """Simulate one path under the physical law, including the hidden disorder.

    The disorder variables come first (a single inverse-CDF uniform for the
    change time, one uniform for the rate atom), then the pre- and
    post-disorder arrival segments and finally the two mark blocks, so the
    draw order is independent of the realized event counts.
    """
    if horizon <= 0.0:
        raise InvalidParamsError(["horizon must be positive"])
    gen = _generator(seed, replication, _PURPOSE_PHYSICAL)
    u = gen.uniform()
    if u < params.pi:
        theta = 0.0
    else:
        theta = -math.log((1.0 - u) / (1.0 - params.pi)) / params.lam
    lam_post = params.mu + (2.0 if gen.uniform() < params.p_up_two else 1.0)
    cut = min(theta, horizon)
    pre = _draw_interarrivals(gen, params.mu, 0.0, cut)
    post = _draw_interarrivals(gen, lam_post, theta, horizon) if theta < horizon else []
    marks_pre = _draw_marks(gen, params.marks, len(pre), post=False)
    marks_post = _draw_marks(gen, params.marks, len(post), post=True)
    arrivals = np.asarray(pre + post, dtype=float)
    marks = np.concatenate([marks_pre, marks_post])
    return PathRecord(horizon=horizon, arrivals=arrivals, marks=marks,
                      theta=theta, lambda_post=lam_post, seed=seed)


_END_OF_PATH = object()


def stream_events(record: PathRecord) -> Iterator[tuple]:
    """Yield ``(time, mark)`` pairs in order, then a single ``(horizon, None)`` sentinel.

    Re-validates ordering while streaming so corrupted inputs surface as
    :class:`PathDataError` instead of silent misfiltering.
    """
    prev = 0.0
    arr = np.asarray(record.arrivals, dtype=float)
    mk = np.asarray(record.marks, dtype=float)
    for k in range(arr.size):
        t = float(arr[k])
        if t <= prev or t > record.horizon:
            raise PathDataError(f"event {k} out of order or beyond horizon")
        yield (t, float(mk[k]))
        prev = t
    yield (record.horizon, None)


def path_to_dict(record: PathRecord) -> dict:
    return {
        "seed": record.seed,
        "horizon": record.horizon,
        "theta": record.theta,
        "lambda_post": record.lambda_post,
        "events": [[float(t), float(y)] for t, y in zip(record.arrivals, record.marks)],
    }


def path_from_dict(raw: dict) -> PathRecord:
    events = raw.get("events", [])
    arrivals = np.asarray([e[0] for e in events], dtype=float)
    marks = np.asarray([e[1] for e in events], dtype=float)
    return PathRecord(horizon=float(raw["horizon"]), arrivals=arrivals, marks=marks,
                      theta=raw.get("theta"), lambda_post=raw.get("lambda_post"),
                      seed=int(raw.get("seed", 0)))


def write_paths_jsonl(records: Iterable[PathRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(path_to_dict(rec), sort_keys=True) + "\n")


def read_paths_jsonl(path: str) -> list[PathRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(path_from_dict(json.loads(line)))
    return out


@dataclass(frozen=True)
class PathBatch:
    """Column-oriented storage of many paths (CSR layout) for vectorized evaluation.

    ``theta`` and ``lambda_post`` hold NaN for reference-law batches.  Path
    ``i`` is bit-identical to the scalar sampler called with the same master
    seed and ``replication=i``.
    """

    horizon: float
    offsets: np.ndarray
    times: np.ndarray
    marks: np.ndarray
    theta: np.ndarray
    lambda_post: np.ndarray
    master_seed: int
    measure: str  # "physical" | "reference"

    @property
    def n_paths(self) -> int:
        return self.offsets.size - 1


def sample_batch(params: ModelParams, horizon: float, seed: int, n_paths: int,
                 measure: str = "physical") -> PathBatch:
    """Simulate ``n_paths`` independent paths under the requested law."""
    if measure not in ("physical", "reference"):
        raise InvalidParamsError([f"unknown measure {measure!r}"])
    sampler = sample_path_physical if measure == "physical" else sample_path_reference
    times: list[np.ndarray] = []
    marks: list[np.ndarray] = []
    counts = np.empty(n_paths, dtype=np.int64)
    theta = np.full(n_paths, np.nan)
    lam_post = np.full(n_paths, np.nan)
    for i in range(n_paths):
        rec = sampler(params, horizon, seed, replication=i)
        times.append(np.asarray(rec.arrivals, dtype=float))
        marks.append(np.asarray(rec.marks, dtype=float))
        counts[i] = rec.n_events
        if rec.theta is not None:
            theta[i] = rec.theta
            lam_post[i] = rec.lambda_post
    offsets = np.zeros(n_paths + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return PathBatch(horizon=horizon, offsets=offsets,
                     times=np.concatenate(times) if times else np.empty(0),
                     marks=np.concatenate(marks) if marks else np.empty(0),
                     theta=theta, lambda_post=lam_post, master_seed=seed, measure=measure)
