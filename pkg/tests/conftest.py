"""Shared fixtures: canonical parameter sets, one per closed-form regime."""

from __future__ import annotations

import numpy as np
import pytest

import cpdisorder as cp


@pytest.fixture(scope="session")
def params_r1():
    return cp.ModelParams(lam=2.5, c=1.0, mu=1.0, m=1.5)


@pytest.fixture(scope="session")
def params_r2():
    return cp.ModelParams(lam=1.5, c=0.7, mu=1.0, m=1.5)


@pytest.fixture(scope="session")
def params_r3():
    return cp.ModelParams(lam=0.5, c=1.6, mu=1.0, m=1.5)


@pytest.fixture(scope="session")
def params_r4():
    return cp.ModelParams(lam=1.5, c=0.25, mu=1.0, m=1.5)


@pytest.fixture(scope="session")
def params_r7():
    return cp.ModelParams(lam=0.5, c=0.2, mu=1.0, m=1.5)


@pytest.fixture(scope="session")
def solved_r1_small(params_r1):
    """Coarse solved ladder for unit tests; the acceptance suite solves at full size."""
    spec = cp.default_grid_spec(params_r1, n0=48, n1=48)
    return cp.value_iteration(params_r1, params_r1.marks, spec, target_err=1e-6)


@pytest.fixture(scope="session")
def solved_r4_small(params_r4):
    spec = cp.default_grid_spec(params_r4, n0=48, n1=48)
    return cp.value_iteration(params_r4, params_r4.marks, spec, target_err=1e-6)


def random_params(rng: np.random.Generator) -> cp.ModelParams:
    """A random valid parameter tuple, spread across all regimes."""
    return cp.ModelParams(
        lam=float(rng.uniform(0.05, 3.0)),
        c=float(rng.uniform(0.05, 3.0)),
        mu=float(rng.uniform(0.2, 3.0)),
        m=float(rng.uniform(1.01, 1.99)),
        pi=float(rng.uniform(0.0, 0.9)),
    )
