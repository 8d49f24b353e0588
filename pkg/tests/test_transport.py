import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphereot.kernels import cost, cost_matrix, log_kernel, power_kernel
from sphereot.sphere import DiscreteMeasure, make_grid, unit
from sphereot.transport import (
    InfeasibleError,
    MonotonicityError,
    NoFinitePlanError,
    NoSeparatedPlanError,
    PotentialFn,
    brute_force,
    c_transform,
    chain_potential,
    check_cyclical_monotonicity,
    monge_cost,
    plan_from_dict,
    separated_plan,
    solve_kantorovich,
    superdifferential,
)

LOG = log_kernel()
LOG2 = math.log(2.0)


def circle(*deg):
    t = np.radians(deg)
    return np.column_stack((np.cos(t), np.sin(t)))


def random_measure(rng, n, dim=2, uniform=True):
    pts = unit(rng.standard_normal((n, dim + 1)))
    w = np.full(n, 1.0 / n) if uniform else rng.integers(1, 6, n).astype(float)
    return DiscreteMeasure(pts, w / w.sum())


# -- solver ------------------------------------------------------------------


def test_single_atoms():
    mu = DiscreteMeasure([[1, 0, 0]], [1.0])
    nu = DiscreteMeasure([[0, 1, 0]], [1.0])
    r = solve_kantorovich(LOG, mu, nu)
    assert r.plan.pairs == [(0, 0, 1.0)]
    assert r.cost == 0.0


def test_two_by_two_circle():
    mu = DiscreteMeasure(circle(0, 90), [0.5, 0.5])
    nu = DiscreteMeasure(circle(180, 270), [0.5, 0.5])
    r = solve_kantorovich(LOG, mu, nu)
    assert sorted((i, j) for i, j, _ in r.plan.pairs) == [(0, 0), (1, 1)]
    assert r.cost == pytest.approx(-LOG2, abs=1e-12)
    # the other pairing costs 0
    assert monge_cost(LOG, [1, 0], mu, nu) == pytest.approx(0.0, abs=1e-15)


def test_antipodal_swap_forced_by_diagonal():
    pts = [[0, 0, 1], [0, 0, -1]]
    mu = DiscreteMeasure(pts, [0.5, 0.5])
    r = solve_kantorovich(LOG, mu, mu)
    assert sorted((i, j) for i, j, _ in r.plan.pairs) == [(0, 1), (1, 0)]
    assert r.cost == pytest.approx(-LOG2, abs=1e-15)


def test_errors():
    mu = DiscreteMeasure([[1, 0, 0]], [1.0])
    with pytest.raises(NoFinitePlanError):
        solve_kantorovich(LOG, mu, mu)
    with pytest.raises(InfeasibleError):
        solve_kantorovich(LOG, mu, DiscreteMeasure([[0, 1, 0]], [0.5]))


@pytest.mark.parametrize("seed", range(15))
def test_matches_brute_force_uniform(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    mu, nu = random_measure(rng, n), random_measure(rng, n)
    k = LOG if seed % 2 else power_kernel(1.5)
    r = solve_kantorovich(k, mu, nu)
    C = cost_matrix(k, mu.points, nu.points)
    assert r.cost == pytest.approx(brute_force(C), abs=1e-9)
    assert abs(r.duals.value(mu, nu) - r.cost) < 1e-9
    assert r.duals.max_violation(C) < 1e-9
    assert max(r.plan.marginal_errors()) < 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_matches_vertex_enumeration_nonuniform(seed):
    rng = np.random.default_rng(100 + seed)
    mu, nu = random_measure(rng, 3, uniform=False), random_measure(rng, 4, uniform=False)
    r = solve_kantorovich(LOG, mu, nu)
    C = cost_matrix(LOG, mu.points, nu.points)
    assert r.cost == pytest.approx(brute_force(C, mu.weights, nu.weights), abs=1e-9)
    assert abs(r.duals.value(mu, nu) - r.cost) < 1e-9


def test_shared_atoms_are_never_paired_with_themselves():
    rng = np.random.default_rng(7)
    pts = unit(rng.standard_normal((6, 3)))
    mu = DiscreteMeasure(pts, np.full(6, 1 / 6))
    r = solve_kantorovich(LOG, mu, mu)
    assert all(i != j for i, j, _ in r.plan.pairs)
    assert r.cost == pytest.approx(brute_force(cost_matrix(LOG, pts, pts)), abs=1e-9)


def test_complementary_slackness_on_support():
    rng = np.random.default_rng(8)
    mu, nu = random_measure(rng, 30, uniform=False), random_measure(rng, 25, uniform=False)
    r = solve_kantorovich(LOG, mu, nu)
    C = cost_matrix(LOG, mu.points, nu.points)
    tight = r.duals.u[r.plan.rows] + r.duals.v[r.plan.cols] - C[r.plan.rows, r.plan.cols]
    assert np.max(np.abs(tight)) < 1e-9


def test_simplex_and_central_duals_agree_on_value():
    rng = np.random.default_rng(9)
    mu, nu = random_measure(rng, 12), random_measure(rng, 12)
    a = solve_kantorovich(LOG, mu, nu, duals="simplex")
    b = solve_kantorovich(LOG, mu, nu, duals="central")
    assert a.cost == pytest.approx(b.cost, abs=1e-12)
    for r in (a, b):
        assert abs(r.duals.value(mu, nu) - r.cost) < 1e-9
    with pytest.raises(ValueError):
        solve_kantorovich(LOG, mu, nu, duals="fancy")


def test_plan_json_round_trip():
    rng = np.random.default_rng(10)
    mu, nu = random_measure(rng, 5), random_measure(rng, 5)
    r = solve_kantorovich(LOG, mu, nu)
    data = json.loads(r.to_json())
    assert set(data) == {"pairs", "shape", "cost", "dual_u", "dual_v"}
    plan = plan_from_dict(data, mu, nu)
    np.testing.assert_array_equal(plan.rows, r.plan.rows)
    np.testing.assert_array_equal(plan.mass, r.plan.mass)
    with pytest.raises(ValueError):
        plan_from_dict(data, mu, random_measure(rng, 6))
    with pytest.raises(ValueError):
        plan_from_dict({"pairs": [[0, 7, 1.0]]}, mu, nu)


def test_monge_cost_relaxation_inequality():
    rng = np.random.default_rng(11)
    for _ in range(10):
        mu, nu = random_measure(rng, 5), random_measure(rng, 5)
        opt = solve_kantorovich(LOG, mu, nu).cost
        for p in itertools.permutations(range(5)):
            assert monge_cost(LOG, p, mu, nu) >= opt - 1e-9
    with pytest.raises(ValueError):
        monge_cost(LOG, [0, 0, 1, 2, 3], mu, nu)


def test_larger_instance_runs_and_is_optimal_against_scipy_lp():
    from scipy.optimize import linprog

    rng = np.random.default_rng(12)
    mu, nu = random_measure(rng, 25, uniform=False), random_measure(rng, 20, uniform=False)
    r = solve_kantorovich(LOG, mu, nu)
    C = cost_matrix(LOG, mu.points, nu.points)
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    lp = linprog(C.reshape(-1), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]), method="highs")
    assert r.cost == pytest.approx(lp.fun, abs=1e-9)


# -- monotonicity --------------------------------------------------------------


def test_known_bad_pairing_deficit():
    X = circle(0, 90)
    Y = circle(270, 180)
    rep = check_cyclical_monotonicity(LOG, X, Y, max_n=4)
    assert not rep.monotone
    assert abs(rep.max_deficit - 2 * LOG2) < 1e-12
    assert rep.violation[1] == (1, 0)


def test_singleton_and_optimal_supports_are_monotone():
    assert check_cyclical_monotonicity(LOG, [[1, 0, 0]], [[0, 1, 0]]).monotone
    rng = np.random.default_rng(13)
    for _ in range(5):
        mu, nu = random_measure(rng, 8), random_measure(rng, 8)
        X, Y = solve_kantorovich(LOG, mu, nu).plan.support_points()
        assert check_cyclical_monotonicity(LOG, X, Y, max_n=4).monotone


def test_monotonicity_sampling_for_large_tuples():
    rng = np.random.default_rng(14)
    mu, nu = random_measure(rng, 9), random_measure(rng, 9)
    X, Y = solve_kantorovich(LOG, mu, nu).plan.support_points()
    rep = check_cyclical_monotonicity(LOG, X, Y, max_n=6, n_samples=200)
    assert rep.monotone and rep.sampled


# -- potentials ----------------------------------------------------------------


def test_c_transform_single_point():
    x1 = np.array([0.0, 0.0, 1.0])
    psi = PotentialFn(LOG, np.array([[1.0, 0, 0]]), np.array([0.3]))
    pc = c_transform(LOG, psi, x1[None, :])
    y = unit(np.array([1.0, 2.0, 0.5]))
    assert pc(y[None, :])[0] == pytest.approx(cost(LOG, x1, y) - psi(x1[None, :])[0], abs=1e-15)


def test_c_transform_of_zero_tends_to_minus_log2():
    y = np.array([[0.0, 0.0, 1.0]])
    errs = []
    for n in (500, 5000, 50_000):
        X = make_grid("fibonacci", n).nodes
        pc = c_transform(LOG, lambda P: np.zeros(len(P)), X)
        errs.append(pc(y)[0] + LOG2)
    assert errs[0] > errs[1] > errs[2] >= 0 and errs[2] < 1e-4


def test_double_transform_recovers_c_concave_potential():
    rng = np.random.default_rng(15)
    anchors = unit(rng.standard_normal((6, 3)))
    G = unit(rng.standard_normal((1000, 3)))
    X = make_grid("fibonacci", 5000).nodes
    # arbitrary offsets: psi^cc <= psi, since anchors missed by X get a smaller offset
    psi = PotentialFn(LOG, anchors, rng.uniform(-0.5, 0.5, 6))
    psi_cc = c_transform(LOG, c_transform(LOG, psi, X), anchors)
    assert np.all(psi_cc(G) <= psi(G) + 1e-12)
    # small offsets: every anchor wins at its own antipode, which X now contains
    psi = PotentialFn(LOG, anchors, rng.uniform(-0.01, 0.01, 6))
    Xa = np.vstack([X, -anchors])
    assert set(psi.active(-anchors)[1].tolist()) == set(range(6))
    psi_cc = c_transform(LOG, c_transform(LOG, psi, Xa), anchors)
    assert np.max(np.abs(psi_cc(G) - psi(G))) < 1e-9


def test_superdifferential_contains_optimal_support():
    rng = np.random.default_rng(16)
    mu, nu = random_measure(rng, 5), random_measure(rng, 5)
    r = solve_kantorovich(LOG, mu, nu)
    psi = PotentialFn(LOG, nu.points, -r.duals.v)
    sd = superdifferential(LOG, psi, mu.points, nu.points, tol=1e-9)
    for i, j, _ in r.plan.pairs:
        assert (i, j) in sd.pairs
    assert sd.delta > 0 and sd.max_violation <= 2e-9
    one = PotentialFn(LOG, nu.points[:1], np.array([0.2]))
    sd1 = superdifferential(LOG, one, mu.points, nu.points[:1])
    assert len(sd1.pairs) == len(mu)


def test_chain_potential_single_pair():
    x0, y0 = np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]])
    psi = chain_potential(LOG, x0, y0)
    rng = np.random.default_rng(17)
    G = unit(rng.standard_normal((50, 3)))
    np.testing.assert_allclose(psi(G), cost(LOG, G, y0[0]) - cost(LOG, x0[0], y0[0]), atol=1e-15)
    assert psi(x0)[0] == 0.0


def test_chain_potential_on_optimal_support():
    rng = np.random.default_rng(18)
    mu, nu = random_measure(rng, 5), random_measure(rng, 5)
    X, Y = solve_kantorovich(LOG, mu, nu).plan.support_points()
    for base in range(len(X)):
        psi = chain_potential(LOG, X, Y, base=base)
        assert psi(X[base:base + 1])[0] == 0.0
        sd = superdifferential(LOG, psi, X, Y, tol=1e-9)
        assert all((i, i) in sd.pairs for i in range(len(X)))


def test_chain_potential_rejects_non_monotone():
    with pytest.raises(MonotonicityError):
        chain_potential(LOG, circle(0, 90), circle(270, 180))


# -- separated plan ------------------------------------------------------------


def test_separated_plan_slab_gap():
    rng = np.random.default_rng(19)
    lo = unit(rng.standard_normal((40, 3)))
    lo = lo[lo[:, 2] < -0.5][:10]
    hi = lo * np.array([1, 1, -1])
    rng.shuffle(hi)
    mu, nu = DiscreteMeasure(lo, np.full(10, 0.1)), DiscreteMeasure(hi, np.full(10, 0.1))
    plan, eps = separated_plan(mu, nu)
    assert eps >= 1.0 - 1e-12
    assert max(plan.marginal_errors()) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_separated_plan_identical_samples(seed):
    rng = np.random.default_rng(20 + seed)
    mu = random_measure(rng, 100)
    plan, eps = separated_plan(mu, mu)
    assert eps > 0 and eps == plan.min_distance()
    assert max(plan.marginal_errors()) < 1e-12


def test_separated_plan_rejects_single_common_atom():
    mu = DiscreteMeasure([[0, 0, 1]], [1.0])
    with pytest.raises(NoSeparatedPlanError):
        separated_plan(mu, mu)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.integers(0, 2**31))
def test_separated_plan_property(m, n, seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(unit(rng.standard_normal((m, 3))), rng.integers(1, 5, m).astype(float))
    w = rng.integers(1, 5, n).astype(float)
    nu = DiscreteMeasure(unit(rng.standard_normal((n, 3))), w * mu.total_mass / w.sum())
    plan, eps = separated_plan(mu, nu)
    assert eps > 0
    assert max(plan.marginal_errors()) < 1e-12 * max(1.0, mu.total_mass)
