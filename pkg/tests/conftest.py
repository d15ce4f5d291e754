import math

import numpy as np
import pytest

from diffcomp.convex import PayoffSpec, ScalarFunction
from diffcomp.model import DiffusionModel
from diffcomp.sde import SimPlan

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)
# E max(N(1,1), 0) - E max(N(0,1), 0) = Phi(1) + phi(1) - phi(0)
RELU_DRIFT_DELTA = 1.0833154705876864 - PHI0


def const_model(sigma, drift=None, x0=None) -> DiffusionModel:
    return DiffusionModel.constant(np.atleast_2d(sigma), drift=drift, x0=x0)


def payoff(kind, weights=(1.0,), params=(), convex=True, nondecreasing=False) -> PayoffSpec:
    return PayoffSpec(weights=list(weights), f=ScalarFunction(kind=kind, params=list(params)),
                      declared_convex=convex, declared_nondecreasing=nondecreasing)


def plan(paths=20000, seed=7, steps=1, horizon=1.0) -> SimPlan:
    return SimPlan(horizon=horizon, steps=steps, paths=paths, seed=seed)


def assert_within_se(estimate, expected, se, k=4.0):
    """Statistical check: |estimate - expected| <= k standard errors (plus rounding slack)."""
    assert abs(estimate - expected) <= k * se + 1e-12, f"{estimate} vs {expected} (se {se})"


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "out"
