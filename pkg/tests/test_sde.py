import numpy as np
import pytest
from pydantic import ValidationError

from diffcomp.config import BLOCK_PATHS
from diffcomp.errors import SimulationError, SpecificationError
from diffcomp.sde import (
    PairedSamples,
    SimPlan,
    brownian_increment,
    dump_samples,
    estimate,
    increment_moments,
    simulate_pair,
    strong_error_probe,
    weak_error_probe,
)

from conftest import PHI0, assert_within_se, const_model, payoff, plan


def test_increments_are_deterministic():
    a = brownian_increment(7, 12345, 3, 2)
    b = brownian_increment(7, 12345, 3, 2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, brownian_increment(7, 12345, 4, 2))
    assert not np.array_equal(a, brownian_increment(8, 12345, 3, 2))
    assert not np.array_equal(a, brownian_increment(7, 12345 + BLOCK_PATHS, 3, 2))


def test_identical_models_give_zero_difference():
    m = const_model([[1.0]])
    p = payoff("abs")
    samples = simulate_pair(m, m, p, p, plan(paths=5000))
    assert np.all(samples.diff == 0.0)
    est = estimate(samples)
    assert est.mean == 0.0 and est.std_error == 0.0 and est.paths == 5000


def test_thread_count_does_not_change_results():
    x, y = const_model([[1.0]]), const_model([[1.5]])
    p = payoff("relu")
    one = simulate_pair(x, y, p, p, plan(paths=3 * BLOCK_PATHS + 17, steps=4), threads=1)
    three = simulate_pair(x, y, p, p, plan(paths=3 * BLOCK_PATHS + 17, steps=4), threads=3)
    assert np.array_equal(one.payoff_x, three.payoff_x)
    assert np.array_equal(one.payoff_y, three.payoff_y)
    assert estimate(one) == estimate(three)


def test_quadratic_gap_matches_variance_gap():
    x, y = const_model([[1.0]]), const_model([[np.sqrt(2.0)]])
    p = payoff("quadratic")
    samples = simulate_pair(x, y, p, p, plan(paths=20000))
    est = estimate(samples)
    assert_within_se(est.mean, 1.0, est.std_error)
    assert_within_se(estimate(samples, "x").mean, 1.0, estimate(samples, "x").std_error)


def test_abs_expectation_2d():
    m = const_model(np.eye(2))
    p = payoff("abs", weights=(1.0, 1.0))
    samples = simulate_pair(m, m, p, p, plan(paths=40000))
    est = estimate(samples, "x")
    assert_within_se(est.mean, 2.0 * np.sqrt(2.0) * PHI0, est.std_error)


def test_linear_payoff_is_a_martingale():
    x0 = [0.5, -1.0]
    x = const_model([[1.0, 0.0], [0.3, 0.8]], x0=x0)
    y = const_model([[1.5, 0.0], [0.0, 1.2]], x0=x0)
    p = payoff("linear", weights=(2.0, 1.0))
    samples = simulate_pair(x, y, p, p, plan(paths=20000, steps=4))
    for side in ("x", "y"):
        est = estimate(samples, side)
        assert_within_se(est.mean, 0.0, est.std_error)


def test_shifting_the_start_shifts_the_payoff_argument():
    d = np.array([0.7, -0.2])
    sigma = [[1.0, 0.0], [0.3, 0.8]]
    p = payoff("linear", weights=(2.0, 1.0))
    base = simulate_pair(const_model(sigma), const_model(sigma), p, p, plan(paths=5000, steps=3))
    moved = simulate_pair(const_model(sigma, x0=d), const_model(sigma, x0=d), p, p, plan(paths=5000, steps=3))
    np.testing.assert_allclose(moved.payoff_x - base.payoff_x, 2.0 * 0.7 - 0.2, rtol=0.0, atol=1e-12)


def test_mismatched_start_is_rejected():
    with pytest.raises(SpecificationError):
        simulate_pair(const_model([[1.0]], x0=[0.0]), const_model([[1.0]], x0=[1.0]),
                      payoff("abs"), payoff("abs"), plan(paths=10))


def test_overflowing_payoff_exceeds_flag_budget():
    m = const_model([[1.0]])
    p = payoff("exp-scaled", params=[800.0])
    with pytest.raises(SimulationError):
        simulate_pair(m, m, p, p, plan(paths=2000))


def test_estimate_needs_two_samples():
    with pytest.raises(SimulationError):
        estimate([1.0])
    est = estimate([1.0, 3.0])
    assert est.mean == 2.0
    assert est.std_error == pytest.approx(1.0)


def test_paired_samples_skip_flagged_paths():
    samples = PairedSamples(payoff_x=np.array([1.0, np.inf, 2.0]), payoff_y=np.array([2.0, 0.0, 5.0]),
                            flagged=np.array([False, True, False]))
    assert len(samples) == 2
    assert [s.diff for s in samples] == [1.0, 3.0]
    assert estimate(samples).mean == 2.0


def test_dump_samples_layout(tmp_path):
    m = const_model([[1.0]])
    p = payoff("relu")
    samples = simulate_pair(m, m, p, p, plan(paths=1000))
    target = tmp_path / "samples.bin"
    dump_samples(samples, target)
    assert target.stat().st_size == 24 * 1000
    records = np.fromfile(target, dtype=[("path", "<u8"), ("x", "<f8"), ("y", "<f8")])
    assert records["path"][-1] == 999
    assert np.array_equal(records["x"], samples.payoff_x)


def test_plan_validation():
    with pytest.raises(ValidationError):
        SimPlan(horizon=1.0, steps=1, paths=10, seed=-1)
    with pytest.raises(ValidationError):
        SimPlan(horizon=1.0, steps=1, paths=10, seed=2 ** 64)
    with pytest.raises(ValidationError):
        SimPlan(horizon=0.0, steps=1, paths=10, seed=0)
    assert SimPlan(horizon=2.0, steps=8, paths=1, seed=0).dt == 0.25


def test_euler_is_exact_for_arithmetic_brownian_motion():
    result = strong_error_probe("arith-bm", paths=5000)
    assert result.slope is None
    assert result.max_error <= 1e-12


def test_strong_order_for_gbm():
    result = strong_error_probe("gbm", paths=20000)
    assert 0.35 <= result.slope <= 0.65


def test_weak_order_for_gbm():
    result = weak_error_probe(paths=100000)
    assert 0.7 <= result.slope <= 1.3


def test_probe_ladder_validation():
    with pytest.raises(SpecificationError):
        strong_error_probe("gbm", ladder=(8, 16, 32))
    with pytest.raises(SpecificationError):
        strong_error_probe("gbm", ladder=(8, 16, 32, 40))


def test_increment_moments():
    moments = increment_moments(seed=3, draws=200000, pairs=50000)
    assert moments.draws == 200000
    assert abs(moments.mean[0]) < 0.01
    assert abs(moments.variance[0] - 1.0) < 0.01
    assert abs(moments.correlation) < 0.02
