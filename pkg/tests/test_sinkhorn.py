import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

import oracles
from vta import sinkhorn
from vta.errors import DimensionError, ParamError
from vta.seqcore import uniform_marginals
from vta.sinkhorn import (
    TransportPlan,
    augment_cost,
    default_virtual_cost,
    entropy,
    marginal_violation,
    ot_cost,
    read_matrix_csv,
    read_pgm,
    sinkhorn_solve,
    write_matrix_csv,
    write_pgm,
)


def _problem(seed, n, m, scale=1.0):
    rng = np.random.default_rng(seed)
    C = scale * rng.random((n, m))
    a = rng.random(n) + 0.1
    b = rng.random(m) + 0.1
    return C, a / a.sum(), b / b.sum()


def test_zero_cost_gives_outer_product():
    plan = sinkhorn_solve(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], 0.1)
    np.testing.assert_allclose(plan.entries, 0.25, atol=1e-12)


def test_small_upsilon_recovers_permutation():
    plan = sinkhorn_solve([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5], 0.01)
    np.testing.assert_allclose(np.diag(plan.entries), 0.5, atol=1e-8)
    assert plan.entries[0, 1] < 1e-8 and plan.entries[1, 0] < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.sampled_from([1e-3, 0.01, 0.05, 0.5, 5.0]),
       st.sampled_from([1.0, 10.0, 100.0]), st.integers(0, 10**6))
def test_converged_plans_are_feasible(n, m, eps, scale, seed):
    C, a, b = _problem(seed, n, m, scale)
    plan = sinkhorn_solve(C, a, b, eps, max_iter=50000, tol=1e-8)
    assert plan.converged
    assert marginal_violation(plan) <= 1e-8
    assert np.all(plan.entries >= 0) and np.all(np.isfinite(plan.entries))


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("eps", [0.05, 0.2, 1.0])
def test_matches_scalar_log_domain_oracle(seed, eps):
    C, a, b = _problem(seed, 4, 5)
    plan = sinkhorn_solve(C, a, b, eps, max_iter=50000, tol=1e-13)
    ref = oracles.sinkhorn_log(C.tolist(), a.tolist(), b.tolist(), eps)
    np.testing.assert_allclose(plan.entries, ref, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_stabilized_path_matches_oracle(seed):
    # cost spread / upsilon far beyond the plain kernel's range
    C, a, b = _problem(seed, 5, 4, scale=50.0)
    eps = 0.05
    assert C.max() / eps > 700
    plan = sinkhorn_solve(C, a, b, eps, max_iter=100000, tol=1e-12)
    ref = oracles.sinkhorn_log(C.tolist(), a.tolist(), b.tolist(), eps, iters=100000)
    np.testing.assert_allclose(plan.entries, ref, atol=1e-9)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("seed", range(4))
def test_low_temperature_cost_approaches_assignment(n, seed):
    C = np.random.default_rng(seed).random((n, n))
    plan = sinkhorn_solve(C, uniform_marginals(n), uniform_marginals(n), 1e-3, max_iter=100000, tol=1e-10)
    rows, cols = linear_sum_assignment(C)
    hungarian = C[rows, cols].sum() / n
    assert math.isclose(hungarian, oracles.brute_force_assignment(C.tolist()) / n, rel_tol=1e-12)
    # the entropic cost sits above the LP optimum by at most upsilon * log(n^2) in the worst case
    assert hungarian - 1e-8 <= ot_cost(plan, C) <= hungarian + 1e-3 * 2 * math.log(n)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(0.02, 1.0), st.integers(0, 10**6))
def test_plan_beats_other_couplings(n, m, eps, seed):
    C, a, b = _problem(seed, n, m)
    plan = sinkhorn_solve(C, a, b, eps, max_iter=50000, tol=1e-12)

    def objective(T):
        return ot_cost(T, C) - eps * entropy(T)

    best = objective(plan)
    rng = np.random.default_rng(seed)
    other = np.outer(a, b)
    assert best <= objective(other) + 1e-9
    for _ in range(5):
        # feasible perturbation: add a zero-marginal cycle, scaled to stay non-negative
        i, k = rng.choice(n, 2, replace=False)
        j, l = rng.choice(m, 2, replace=False)
        D = np.zeros((n, m))
        D[i, j] = D[k, l] = 1.0
        D[i, l] = D[k, j] = -1.0
        T = plan.entries
        step = 0.5 * min(T[i, l], T[k, j])
        assert best <= objective(T + step * D) + 1e-9


def test_shift_invariance_and_potentials():
    C, a, b = _problem(7, 6, 5)
    p1 = sinkhorn_solve(C, a, b, 0.1, tol=1e-12, max_iter=10000)
    p2 = sinkhorn_solve(C + 3.7, a, b, 0.1, tol=1e-12, max_iter=10000)
    np.testing.assert_allclose(p1.entries, p2.entries, atol=1e-12)
    f, g = p1.potentials
    np.testing.assert_allclose(np.exp((f[:, None] + g[None, :] - C) / 0.1), p1.entries, atol=1e-12)


def test_warm_start_same_answer_fewer_iterations():
    C, a, b = _problem(11, 12, 10)
    cold = sinkhorn_solve(C, a, b, 0.02, tol=1e-9, max_iter=10000)
    nearby = C + 0.001 * np.random.default_rng(0).random(C.shape)
    ref = sinkhorn_solve(nearby, a, b, 0.02, tol=1e-9, max_iter=10000)
    warm = sinkhorn_solve(nearby, a, b, 0.02, tol=1e-9, max_iter=10000, init=cold.potentials)
    assert warm.converged
    np.testing.assert_allclose(warm.entries, ref.entries, atol=1e-7)
    assert warm.n_iter < ref.n_iter


def test_iteration_cap_flags_nonconvergence():
    C, a, b = _problem(1, 8, 8)
    plan = sinkhorn_solve(C, a, b, 0.001, max_iter=1, tol=1e-12)
    assert not plan.converged
    assert plan.n_iter == 1
    assert plan.marginal_error > 1e-12


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.5])
def test_newton_and_scaling_give_the_same_plan(monkeypatch, eps):
    C, a, b = _problem(3, 9, 7)
    newton = sinkhorn_solve(C, a, b, eps, max_iter=200000, tol=1e-12)
    monkeypatch.setattr(sinkhorn, "_NEWTON_MAX_DIM", 0)
    scaling = sinkhorn_solve(C, a, b, eps, max_iter=200000, tol=1e-12)
    assert newton.converged and scaling.converged
    np.testing.assert_allclose(newton.entries, scaling.entries, atol=1e-10)


def test_cold_near_permutation_converges_within_default_budget():
    # at this temperature the plan is a tie cycle plus weakly linked blocks
    C = np.random.default_rng(1).random((5, 5))
    plan = sinkhorn_solve(C, uniform_marginals(5), uniform_marginals(5), 1e-3)
    assert plan.converged and plan.n_iter < 100
    rows, cols = linear_sum_assignment(C)
    assert abs(ot_cost(plan, C) - C[rows, cols].sum() / 5) <= 1e-3


def test_annealing_leaves_budget_for_the_final_solve(monkeypatch):
    monkeypatch.setattr(sinkhorn, "_NEWTON_MAX_DIM", 0)
    C = np.random.default_rng(1).random((5, 5))
    plan = sinkhorn_solve(C, uniform_marginals(5), uniform_marginals(5), 1e-3, max_iter=1000)
    # the warm-up stages stop at half the budget, so the final solve still gets to finish
    assert plan.converged and plan.n_iter > 500


def test_large_problem_skips_newton():
    n, m = 330, 300
    assert n + m > sinkhorn._NEWTON_MAX_DIM
    C, a, b = _problem(5, n, m)
    plan = sinkhorn_solve(C, a, b, 0.5)
    assert plan.converged and marginal_violation(plan) <= 1e-6


def test_input_validation():
    with pytest.raises(DimensionError):
        sinkhorn_solve(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5], 0.1)
    with pytest.raises(ParamError):
        sinkhorn_solve(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], 0.0)
    with pytest.raises(ParamError):
        sinkhorn_solve(np.zeros((2, 2)), [1.0, 0.0], [0.5, 0.5], 0.1)
    with pytest.raises(ParamError):
        sinkhorn_solve([[0.0, np.inf], [0.0, 0.0]], [0.5, 0.5], [0.5, 0.5], 0.1)


def test_ot_cost_examples():
    C = [[0, 1], [1, 0]]
    assert ot_cost(np.array([[0.5, 0], [0, 0.5]]), C) == 0.0
    assert ot_cost(np.full((2, 2), 0.25), C) == 0.5
    assert math.isclose(ot_cost(np.full((3, 4), 1 / 12), np.full((3, 4), 2.5)), 2.5)
    with pytest.raises(DimensionError):
        ot_cost(np.ones((2, 2)), np.ones((2, 3)))


def test_entropy_examples():
    assert entropy(np.array([[1.0]])) == 1.0
    # -sum t (log t - 1) at two entries of 1/2 is 1 + log 2
    assert math.isclose(entropy(np.array([[0.5, 0], [0, 0.5]])), 1 + math.log(2), rel_tol=1e-15)
    assert math.isclose(entropy(np.array([[0.5, 0], [0, 0.5]])), 1.69315, abs_tol=1e-5)


@given(st.integers(0, 10**6))
def test_entropy_matches_loop_and_peaks_at_outer_product(seed):
    rng = np.random.default_rng(seed)
    T = oracles.random_augmented_plan(rng, 3, 4)
    assert math.isclose(entropy(T), oracles.plan_entropy(T.tolist()), rel_tol=1e-12)
    a, b = T.sum(axis=1), T.sum(axis=0)
    assert entropy(np.outer(a, b)) >= entropy(T) - 1e-12


def test_default_virtual_cost_is_median_nearest_neighbour():
    C = np.random.default_rng(2).random((5, 7))
    mins = [min(row) for row in C.tolist()] + [min(col) for col in C.T.tolist()]
    mins.sort()
    median = (mins[5] + mins[6]) / 2
    assert math.isclose(default_virtual_cost(C), median)


def test_augment_cost_layout():
    C = np.arange(6, dtype=float).reshape(2, 3)
    A = augment_cost(C, 9.0)
    assert A.shape == (3, 4)
    np.testing.assert_array_equal(A[:2, :3], C)
    assert A[2, 3] == 0.0
    assert set(A[2, :3]) == {9.0} and set(A[:2, 3]) == {9.0}


def test_matrix_files_round_trip(tmp_path):
    M = np.random.default_rng(0).random((3, 5))
    write_matrix_csv(M, tmp_path / "m.csv")
    assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), M)
    write_pgm(M, tmp_path / "m.pgm")
    img = read_pgm(tmp_path / "m.pgm")
    assert img.shape == (3, 5)
    assert img.max() == 255
    np.testing.assert_array_equal(img, np.rint(255 * M / M.max()))


def test_plan_type_checks():
    with pytest.raises(DimensionError):
        TransportPlan(np.ones((2, 2)), np.ones(3), np.ones(2))
    plan = TransportPlan.from_array(np.full((3, 3), 1 / 9), augmented=True)
    assert plan.real.shape == (2, 2)
