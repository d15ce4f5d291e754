import numpy as np
import pytest

from diffcomp.convex import ScalarFunction, mollify
from diffcomp.errors import SpecificationError
from diffcomp.kernels import (
    ConstKernel,
    adjoint_coefficients,
    chapman_kolmogorov_check,
    gaussian_bound_check,
    gaussian_expectation,
    kernel,
    lemma1_check,
    ver_identity_check,
)

from conftest import PHI0, payoff

HALF = ConstKernel(np.array([[0.5]]), np.zeros(1))


def random_spd(rng, n):
    M = rng.normal(size=(n, n))
    return 0.5 * M @ M.T + 0.1 * np.eye(n)


def test_standard_normal_peak():
    assert float(kernel(HALF, 1.0, np.zeros(1), 0.0, np.zeros(1)).value) == pytest.approx(PHI0, abs=1e-12)
    assert float(kernel(HALF, 1.0, np.zeros(1), 0.0, np.zeros(1)).value) == pytest.approx(0.398942, abs=1e-6)


def test_kernel_integrates_to_one():
    k = ConstKernel(np.array([[0.7]]), np.array([0.4]))
    y = np.linspace(-20.0, 20.0, 40001)[:, None]
    mass = np.trapezoid(kernel(k, 1.3, np.array([0.2]), 0.1, y).value, y[:, 0])
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_gradient_vanishes_at_the_mode():
    k = ConstKernel(np.array([[0.5]]), np.array([0.6]))
    # mode in x sits where x - y + b tau = 0
    ev = kernel(k, 1.0, np.array([-0.6]), 0.0, np.zeros(1))
    assert np.allclose(ev.grad, 0.0, atol=1e-15)
    assert float(ev.hess[0, 0]) < 0


def test_time_order_is_enforced():
    with pytest.raises(SpecificationError):
        kernel(HALF, 1.0, np.zeros(1), 1.0, np.zeros(1))
    with pytest.raises(SpecificationError):
        kernel(HALF, 0.5, np.zeros(1), 1.0, np.zeros(1))


def test_kernel_needs_positive_definite_matrix():
    with pytest.raises(SpecificationError):
        ConstKernel(np.array([[0.0]]), np.zeros(1))
    with pytest.raises(SpecificationError):
        ConstKernel(np.array([[1.0, 0.3], [0.0, 1.0]]), np.zeros(2))


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(5)
    k = ConstKernel(random_spd(rng, 2), np.array([0.3, -0.2]))
    x, y, h = np.array([0.1, -0.4]), np.array([0.5, 0.2]), 1e-5
    ev = kernel(k, 0.9, x, 0.2, y)
    for i in range(2):
        e = np.eye(2)[i] * h
        up, down = kernel(k, 0.9, x + e, 0.2, y), kernel(k, 0.9, x - e, 0.2, y)
        assert ev.grad[i] == pytest.approx((up.value - down.value) / (2 * h), abs=1e-6)
        assert ev.hess[:, i] == pytest.approx((up.grad - down.grad) / (2 * h), abs=1e-6)


def test_forward_and_adjoint_kernels_agree():
    k = ConstKernel(np.array([[0.5]]), np.array([0.7]))
    fwd = kernel(k, 1.0, np.array([0.3]), 0.0, np.array([-0.2]))
    adj = kernel(k.adjoint(), 1.0, np.array([0.3]), 0.0, np.array([-0.2]))
    assert float(fwd.value) == pytest.approx(float(adj.value), rel=1e-14)
    assert fwd.grad == pytest.approx(-adj.grad, rel=1e-14)
    back = k.adjoint().forward()
    assert back.direction == "forward" and np.array_equal(back.b, k.b)
    assert k.c_star == 0.0


def test_duality_over_random_configurations():
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(100):
        n = 1 + i % 3
        k = ConstKernel(random_spd(rng, n), rng.normal(size=n))
        s = float(rng.uniform(0.0, 1.0))
        t = s + float(rng.uniform(0.05, 1.0))
        worst = max(worst, lemma1_check(k, t, rng.normal(size=n), s, rng.normal(size=n)))
    assert worst <= 1e-10


def test_gaussian_bound():
    loose = gaussian_bound_check(HALF, 1.0, 0.25, samples=1024)
    assert loose.ok and loose.worst <= 1.0
    tight = gaussian_bound_check(HALF, 1.0, 1.0, samples=1024)
    assert not tight.ok
    assert {"tau", "offset", "value", "bound"} <= set(tight.witness)
    with pytest.raises(SpecificationError):
        gaussian_bound_check(HALF, 0.0, 0.25)


@pytest.mark.parametrize("kind", ["quadratic", "abs", "relu"])
def test_derivative_transfer_identity_1d(kind):
    m = mollify(ScalarFunction(kind=kind), 0.1, 4.0)
    assert ver_identity_check(HALF, m, [1.0], 1.0, np.zeros(1)) <= 1e-6


def test_derivative_transfer_identity_2d():
    m = mollify(ScalarFunction(kind="quadratic"), 0.1, 4.0)
    k = ConstKernel(0.5 * np.eye(2), np.zeros(2))
    assert ver_identity_check(k, m, [1.0, 1.0], 1.0, np.zeros(2)) <= 1e-5


PL5 = [-2.0, 1.0, -1.0, 0.0, 0.0, -0.5, 1.0, 0.0, 2.0, 2.0]


@pytest.mark.parametrize("kind,params", [("abs", []), ("relu", []), ("piecewise-linear", PL5)])
def test_derivative_transfer_identity_for_sharp_mollifiers(kind, params):
    m = mollify(ScalarFunction(kind=kind, params=params), 0.01, 2.0)
    assert m.width < 0.05
    assert ver_identity_check(HALF, m, [1.0], 1.0, np.zeros(1)) <= 1e-6
    assert ver_identity_check(HALF, m, [1.0], 0.1, np.array([0.4])) <= 1e-6


def test_derivative_transfer_identity_2d_off_centre():
    m = mollify(ScalarFunction(kind="abs"), 0.01, 2.0)
    k = ConstKernel(np.array([[0.6, 0.2], [0.2, 0.4]]), np.array([0.3, -0.1]))
    assert ver_identity_check(k, m, [1.0, 0.5], 0.5, np.array([0.5, -0.3])) <= 1e-5


def test_derivative_transfer_window_outside_support():
    m = mollify(ScalarFunction(kind="abs"), 0.1, 2.0)
    assert ver_identity_check(HALF, m, [1.0], 0.01, np.array([20.0])) == 0.0


def test_derivative_transfer_zero_data():
    zero = mollify(ScalarFunction(kind="piecewise-linear", params=[0.0, 0.0, 1.0, 0.0]), 0.1, 2.0,
                   width=0.1, gamma=0.0)
    assert ver_identity_check(HALF, zero, [1.0], 1.0, np.zeros(1)) == 0.0


def test_derivative_transfer_argument_checks():
    m = mollify(ScalarFunction(kind="abs"), 0.1, 2.0)
    with pytest.raises(SpecificationError):
        ver_identity_check(HALF, m, [1.0], 1.0, np.zeros(1), radius=1.0)
    with pytest.raises(SpecificationError):
        ver_identity_check(ConstKernel(np.eye(3), np.zeros(3)), m, [1.0] * 3, 1.0, np.zeros(3))


def test_chapman_kolmogorov():
    k = ConstKernel(np.array([[0.5]]), np.array([0.3]))
    assert chapman_kolmogorov_check(k, 1.0, 0.4, 0.0, 0.2, -0.3) <= 1e-6
    with pytest.raises(SpecificationError):
        chapman_kolmogorov_check(k, 1.0, 1.2, 0.0, 0.0, 0.0)


def test_adjoint_coefficients_for_polynomial_operator():
    def a(x):
        return np.array([[1 + x[0] ** 2, 0.5 * x[0] * x[1]], [0.5 * x[0] * x[1], 1 + x[1] ** 2]])

    def b(x):
        return np.array([x[0] ** 2, x[0] * x[1]])

    a0, b_star, c_star = adjoint_coefficients(a, b, lambda x: 0.3, [0.4, -0.7])
    assert a0 == pytest.approx(a(np.array([0.4, -0.7])))
    assert b_star == pytest.approx([1.84, -3.22], abs=1e-6)
    assert c_star == pytest.approx(4.1, abs=1e-6)


def test_gaussian_expectation_closed_form():
    k = ConstKernel(np.array([[0.5]]), np.array([1.0]))
    value = gaussian_expectation(k, payoff("relu"), np.zeros(1), 1.0)
    assert float(value) == pytest.approx(1.0833155, abs=1e-7)
    batch = gaussian_expectation(HALF, payoff("quadratic"), np.array([[0.0], [1.0]]), 1.0)
    assert batch == pytest.approx([1.0, 2.0])
