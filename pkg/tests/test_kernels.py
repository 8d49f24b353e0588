import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphereot.kernels import (
    DomainError,
    admissibility,
    cost,
    cost_matrix,
    g_derivative,
    g_inverse,
    g_value,
    inverse_map_M,
    kernel_from_name,
    log_kernel,
    near_boundary,
    power_kernel,
    tangential_gradient,
)
from sphereot.sphere import geodesic, random_tangent, unit

LOG = log_kernel()
POW = power_kernel(1.0)


def random_pairs(rng, n, dim=2, lo=0.1):
    X = unit(rng.standard_normal((4 * n, dim + 1)))
    Y = unit(rng.standard_normal((4 * n, dim + 1)))
    ok = np.linalg.norm(X - Y, axis=1) >= lo
    return X[ok][:n], Y[ok][:n]


def test_cost_examples():
    assert cost(LOG, [1, 0, 0], [0, 1, 0]) == 0.0
    assert cost(LOG, [1, 0, 0], [-1, 0, 0]) == pytest.approx(-math.log(2), abs=1e-15)
    assert cost(LOG, [0, 0, 1], [0, 0, 1]) == math.inf
    assert cost(POW, [0.6, 0.8, 0], [0.6, 0.8, 0]) == math.inf


def test_log_cost_matches_closed_form_and_is_symmetric():
    rng = np.random.default_rng(0)
    X, Y = random_pairs(rng, 200)
    np.testing.assert_allclose(cost(LOG, X, Y), -np.log(1 - np.sum(X * Y, axis=1)), rtol=1e-12)
    C = cost_matrix(POW, X[:20], Y[:30])
    np.testing.assert_array_equal(C, cost_matrix(POW, Y[:30], X[:20]).T)


def test_kernel_names():
    assert kernel_from_name("log").name == "log"
    assert kernel_from_name("power:2").name == "power:2"
    for bad in ("quad", "power:x"):
        with pytest.raises(ValueError):
            kernel_from_name(bad)
    with pytest.raises(ValueError):
        power_kernel(0)


def test_tangential_gradient_examples():
    np.testing.assert_allclose(tangential_gradient(LOG, [1, 0, 0], [0, 1, 0]), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(tangential_gradient(POW, [0, 0, 1], [0, 0, -1]), 0.0, atol=1e-15)
    with pytest.raises(DomainError):
        tangential_gradient(LOG, [1, 0, 0], [1, 0, 0])
    rng = np.random.default_rng(1)
    X, Y = random_pairs(rng, 500)
    A = tangential_gradient(POW, X, Y)
    scale = np.maximum(1.0, np.linalg.norm(A, axis=1))
    assert np.max(np.abs(np.sum(A * X, axis=1)) / scale) < 1e-12


@pytest.mark.parametrize("k", [LOG, POW, power_kernel(0.5)], ids=lambda k: k.name)
def test_gradient_matches_finite_differences(k):
    rng = np.random.default_rng(2)
    X, Y = random_pairs(rng, 300, lo=0.3)
    h = 1e-6
    worst = 0.0
    for x, y in zip(X, Y):
        a = tangential_gradient(k, x, y)
        for _ in range(2):
            v = random_tangent(x, rng)
            fd = (cost(k, geodesic(x, v, h), y) - cost(k, geodesic(x, v, -h), y)) / (2 * h)
            worst = max(worst, abs(fd - a @ v) / max(1.0, np.linalg.norm(a)))
    assert worst < 1e-5


def test_g_values_log():
    assert g_value(LOG, 1.0) == 1.0
    assert g_inverse(LOG, 3.0) == 0.5
    assert g_inverse(LOG, 3.0, closed_form=False) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        g_inverse(LOG, -1.0)


@pytest.mark.parametrize("k", [LOG, POW, power_kernel(2.5)], ids=lambda k: k.name)
def test_g_inverse_round_trip(k):
    t = np.random.default_rng(3).uniform(1e-3, 2.0, 100)
    back = g_inverse(k, g_value(k, t), closed_form=False)
    assert np.max(np.abs(back - t)) < 1e-10


def test_g_derivative_matches_finite_difference():
    t = np.linspace(0.05, 1.95, 40)
    h = 1e-6
    for k in (LOG, POW):
        fd = (g_value(k, t + h) - g_value(k, t - h)) / (2 * h)
        np.testing.assert_allclose(g_derivative(k, t), fd, rtol=1e-5)


def test_admissibility_reports():
    rep = admissibility(LOG)
    assert rep.ok and rep.direction == "decreasing"
    lo, hi = rep.domain_of_M
    assert lo == 0.0 and hi == pytest.approx(g_value(LOG, 0.005))
    assert admissibility(POW).ok
    bad = admissibility(kernel_from_name("power:-1"))
    assert not bad.g_monotone and not bad.blowup_at_zero and not bad.ok
    assert any("monotonicity" in msg for _, msg in bad.failures)


@pytest.mark.parametrize("k", [LOG, POW], ids=lambda k: k.name)
def test_inverse_map_round_trip(k):
    rng = np.random.default_rng(4)
    X, Y = random_pairs(rng, 10_000)
    Yr = inverse_map_M(k, tangential_gradient(k, X, Y), X)
    assert np.max(np.linalg.norm(Yr - Y, axis=1)) < 1e-10
    assert np.max(np.abs(np.linalg.norm(Yr, axis=1) - 1)) < 1e-10


def test_inverse_map_example_and_errors():
    np.testing.assert_allclose(inverse_map_M(LOG, [0, 1, 0], [1, 0, 0]), [0, 1, 0], atol=1e-15)
    with pytest.raises(DomainError):
        inverse_map_M(LOG, [0, 0, 0], [1, 0, 0])
    with pytest.raises(DomainError):
        inverse_map_M(LOG, [0, 5, 0], [1, 0, 0], domain=(0.0, 3.0))


def test_near_boundary_flags():
    a = np.array([[0, 1e-6, 0], [0, 1, 0]])
    assert near_boundary(LOG, a, (0.0, 399.0)).tolist() == [True, False]


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(0, 2**31))
def test_round_trip_property_power(q, seed):
    k = power_kernel(q)
    rng = np.random.default_rng(seed)
    X, Y = random_pairs(rng, 5, lo=0.2)
    Yr = inverse_map_M(k, tangential_gradient(k, X, Y), X)
    assert np.max(np.linalg.norm(Yr - Y, axis=1)) < 1e-9
