"""Transport solver tests: closed forms, brute-force oracles, limits,
feasibility, and the fixed-plan sample gradients against finite differences."""

import itertools
import math

import numpy as np
import pytest

from otdlab import ot_core as ot


def test_cost_matrix_against_triple_loop():
    rng = np.random.default_rng(0)
    A = rng.normal(0, 1, (5, 3))
    B = rng.normal(0, 1, (4, 3))
    D = ot.pairwise_half_sq_euclidean(A, B)
    for i in range(5):
        for j in range(4):
            want = 0.5 * sum((A[i, k] - B[j, k]) ** 2 for k in range(3))
            assert abs(D[i, j] - want) < 1e-12
    assert D.shape == (5, 4)
    assert np.all(D >= 0.0)


def test_cost_matrix_zero_on_coincident_points():
    A = np.array([[1e3, -1e3], [0.5, 0.25]])
    D = ot.pairwise_half_sq_euclidean(A, A)
    assert D[0, 0] == 0.0 and D[1, 1] == 0.0


def test_sinkhorn_2x2_closed_form():
    # symmetric 2x2 with unit cross cost: off-diagonal mass e^{-1/eps} relative
    # to diagonal, so T = [[a, b], [b, a]] with a = 1/(2(1+e^{-1/eps}))
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    for eps in (0.05, 0.2, 1.0):
        sol = ot.sinkhorn_log(D, epsilon=eps, tol=1e-14, max_iter=10000)
        r = math.exp(-1.0 / eps)
        a = 1.0 / (2.0 * (1.0 + r))
        b = r / (2.0 * (1.0 + r))
        assert np.allclose(sol.plan, [[a, b], [b, a]], atol=1e-12)
        assert sol.converged


def test_sinkhorn_default_eps_near_identity():
    # documented behaviour of the solver on the unit cross-cost instance
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = ot.sinkhorn_log(D, epsilon=0.05)
    assert np.allclose(np.diag(sol.plan), 0.5, atol=1e-8)
    assert sol.plan[0, 1] < 1e-8 and sol.plan[1, 0] < 1e-8


def test_eot_value_uniform_plan():
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    T = np.full((2, 2), 0.25)
    val = ot.eot_value(D, T, epsilon=1.0)
    assert abs(val - (0.5 + math.log(0.25))) < 1e-12
    assert abs(val - (-0.8862944)) < 1e-6


def test_eot_value_zero_entries_contribute_nothing():
    D = np.array([[1.0, 2.0], [3.0, 4.0]])
    T = np.array([[0.5, 0.0], [0.0, 0.5]])
    val = ot.eot_value(D, T, epsilon=2.0)
    assert abs(val - (2.5 + 2.0 * (0.5 * math.log(0.5) * 2))) < 1e-12


def test_eot_value_rejects_negative_plan():
    with pytest.raises(ValueError):
        ot.eot_value(np.zeros((2, 2)), np.array([[0.5, -0.1], [0.1, 0.5]]), 1.0)


def test_large_epsilon_limit_is_outer_product():
    # the converged plan deviates from u mu^T at relative order range(D)/eps
    rng = np.random.default_rng(1)
    D = rng.uniform(0, 1, (5, 7))
    outer = np.full((5, 7), (1 / 5) * (1 / 7))
    prev = np.inf
    for eps in (1e2, 1e4, 1e6):
        sol = ot.sinkhorn_log(D, epsilon=eps, tol=1e-14)
        dev = np.max(np.abs(sol.plan - outer))
        assert dev < 1.0 / eps
        assert dev < prev
        prev = dev


def test_small_epsilon_approaches_assignment():
    # at eps = 1e-3 the dual increments decay sublinearly, so the solve is
    # truncated and the plan rounded back onto the polytope before comparing
    rng = np.random.default_rng(2)
    A = rng.uniform(0, 1, (5, 2))
    B = rng.uniform(0, 1, (5, 2))
    D = ot.pairwise_half_sq_euclidean(A, B)
    exact, _ = ot.exact_assignment_oracle(D)
    sol = ot.sinkhorn_log(D, epsilon=1e-3, tol=1e-9, max_iter=30000)
    plan = ot.round_to_feasible(sol.plan)
    cost = float((D * plan).sum())
    assert abs(cost - exact) < 1e-2 * max(exact, 0.05)
    assert cost >= exact - 1e-12


def test_feasibility_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(20):
        I, J = rng.integers(2, 20, size=2)
        D = rng.uniform(0, 3, (I, J))
        sol = ot.sinkhorn_log(D, epsilon=0.1, tol=1e-10)
        assert sol.converged
        assert ot.marginal_error(sol.plan) < 1e-8
        assert np.all(sol.plan >= 0.0)
        # columns match exactly: the g-update runs last
        assert np.abs(sol.plan.sum(axis=0) - 1.0 / J).max() < 1e-15


def test_nonuniform_marginals_respected():
    rng = np.random.default_rng(4)
    D = rng.uniform(0, 1, (3, 4))
    u = np.array([0.2, 0.3, 0.5])
    mu = np.array([0.1, 0.2, 0.3, 0.4])
    sol = ot.sinkhorn_log(D, ot.Marginals(u, mu), epsilon=0.1, tol=1e-12)
    assert np.abs(sol.plan.sum(axis=1) - u).max() < 1e-10
    assert np.abs(sol.plan.sum(axis=0) - mu).max() < 1e-15


def test_symmetric_instance_gives_symmetric_plan():
    rng = np.random.default_rng(5)
    A = rng.uniform(0, 1, (6, 2))
    D = ot.pairwise_half_sq_euclidean(A, A)
    sol = ot.sinkhorn_log(D, epsilon=0.1, tol=1e-13, max_iter=50000)
    assert sol.converged
    assert np.max(np.abs(sol.plan - sol.plan.T)) < 1e-10
    # duals agree up to the common gauge shift
    shift = sol.f - sol.g
    assert np.max(np.abs(shift - shift.mean())) < 1e-9


def test_log_domain_survives_tiny_epsilon():
    # naive scaling underflows at exp(-D/eps) ~ exp(-1000); duals must not
    rng = np.random.default_rng(6)
    D = rng.uniform(0, 1, (4, 4))
    sol = ot.sinkhorn_log(D, epsilon=1e-3, tol=1e-12, max_iter=100000)
    assert np.all(np.isfinite(sol.plan))
    assert ot.marginal_error(sol.plan) < 1e-10


def test_nonconvergence_flag_and_iteration_count():
    D = np.random.default_rng(7).uniform(0, 5, (8, 8))
    sol = ot.sinkhorn_log(D, epsilon=1e-3, tol=1e-14, max_iter=3)
    assert not sol.converged
    assert sol.iterations == 3


def test_validation_errors():
    D = np.zeros((2, 2))
    with pytest.raises(ValueError):
        ot.sinkhorn_log(D, epsilon=0.0)
    with pytest.raises(ValueError):
        ot.sinkhorn_log(D, epsilon=-1.0)
    with pytest.raises(ValueError):
        ot.sinkhorn_log(D, tol=0.0)
    with pytest.raises(ValueError):
        ot.sinkhorn_log(np.zeros(3))
    with pytest.raises(Exception):
        ot.sinkhorn_log(np.array([[np.inf, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        ot.Marginals(np.array([0.5, 0.5]), np.array([0.7, 0.2]))
    with pytest.raises(ValueError):
        ot.Marginals(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        ot.sinkhorn_log(D, ot.Marginals(np.full(3, 1 / 3), np.full(2, 0.5)))


# ---------------------------------------------------------------------------
# assignment oracle
# ---------------------------------------------------------------------------

def test_oracle_identity_cost():
    # zero diagonal, expensive elsewhere: identity assignment
    D = np.ones((4, 4)) - np.eye(4)
    value, plan = ot.exact_assignment_oracle(D)
    assert value == 0.0
    assert np.array_equal(plan, np.eye(4) / 4)


def test_oracle_known_permutation():
    rng = np.random.default_rng(8)
    sigma = [2, 0, 3, 1]
    D = rng.uniform(1, 2, (4, 4))
    for i, j in enumerate(sigma):
        D[i, j] = 0.0
    value, plan = ot.exact_assignment_oracle(D)
    assert value == 0.0
    want = np.zeros((4, 4))
    for i, j in enumerate(sigma):
        want[i, j] = 0.25
    assert np.array_equal(plan, want)


def test_oracle_ties_keep_lexicographic_first():
    value, plan = ot.exact_assignment_oracle(np.zeros((3, 3)))
    assert value == 0.0
    assert np.array_equal(plan, np.eye(3) / 3)


def test_oracle_beats_greedy_local_search():
    # independent upper bound: greedy row-wise assignment improved by 2-swaps
    rng = np.random.default_rng(9)
    for _ in range(10):
        I = int(rng.integers(3, 7))
        D = rng.uniform(0, 1, (I, I))
        perm = list(range(I))
        improved = True
        while improved:
            improved = False
            for a, b in itertools.combinations(range(I), 2):
                cur = D[a, perm[a]] + D[b, perm[b]]
                swp = D[a, perm[b]] + D[b, perm[a]]
                if swp < cur - 1e-15:
                    perm[a], perm[b] = perm[b], perm[a]
                    improved = True
        greedy_val = sum(D[i, perm[i]] for i in range(I)) / I
        value, _ = ot.exact_assignment_oracle(D)
        assert value <= greedy_val + 1e-12


def test_oracle_rejects_big_or_rectangular():
    with pytest.raises(ValueError):
        ot.exact_assignment_oracle(np.zeros((9, 9)))
    with pytest.raises(ValueError):
        ot.exact_assignment_oracle(np.zeros((3, 4)))


# ---------------------------------------------------------------------------
# sample-location gradients
# ---------------------------------------------------------------------------

def test_grad_matches_fixed_plan_finite_differences():
    rng = np.random.default_rng(10)
    A = rng.normal(0, 1, (4, 3))
    B = rng.normal(0, 1, (5, 3))
    plan = rng.uniform(0, 1, (4, 5))
    plan /= plan.sum()
    gA, gB = ot.grad_wrt_samples(A, B, plan)

    h = 1e-6
    for X, gX in ((A, gA), (B, gB)):
        fd = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            Xp, Xm = X.copy(), X.copy()
            Xp[idx] += h
            Xm[idx] -= h
            if X is A:
                dp = ot.pairwise_half_sq_euclidean(Xp, B)
                dm = ot.pairwise_half_sq_euclidean(Xm, B)
            else:
                dp = ot.pairwise_half_sq_euclidean(A, Xp)
                dm = ot.pairwise_half_sq_euclidean(A, Xm)
            fd[idx] = (np.sum(dp * plan) - np.sum(dm * plan)) / (2 * h)
        assert np.max(np.abs(gX - fd)) < 1e-8


def test_envelope_gradient_against_solver_finite_differences():
    # moving a sample and re-solving: the plan-fixed gradient still matches
    rng = np.random.default_rng(11)
    A = rng.uniform(0, 1, (4, 2))
    B = rng.uniform(0, 1, (4, 2))
    eps, tol = 0.05, 1e-12

    def value(A2, B2):
        D = ot.pairwise_half_sq_euclidean(A2, B2)
        return ot.sinkhorn_log(D, epsilon=eps, tol=tol, max_iter=100000).value

    sol = ot.sinkhorn_log(ot.pairwise_half_sq_euclidean(A, B), epsilon=eps, tol=tol,
                          max_iter=100000)
    gA, gB = ot.grad_wrt_samples(A, B, sol.plan)

    h = 1e-4
    fdA = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        Ap, Am = A.copy(), A.copy()
        Ap[idx] += h
        Am[idx] -= h
        fdA[idx] = (value(Ap, B) - value(Am, B)) / (2 * h)
    assert np.linalg.norm(gA - fdA) / np.linalg.norm(fdA) < 1e-3

    fdB = np.zeros_like(B)
    for idx in np.ndindex(B.shape):
        Bp, Bm = B.copy(), B.copy()
        Bp[idx] += h
        Bm[idx] -= h
        fdB[idx] = (value(A, Bp) - value(A, Bm)) / (2 * h)
    assert np.linalg.norm(gB - fdB) / np.linalg.norm(fdB) < 1e-3


def test_transport_cost_never_below_assignment():
    # short version of the acceptance sweep: rounding makes the plan exactly
    # feasible, so the linear cost dominates the assignment optimum
    rng = np.random.default_rng(12)
    for _ in range(5):
        I = int(rng.integers(2, 6))
        A = rng.uniform(0, 2, (I, 2))
        B = rng.uniform(0, 2, (I, 2))
        D = ot.pairwise_half_sq_euclidean(A, B)
        exact, _ = ot.exact_assignment_oracle(D)
        sol = ot.sinkhorn_log(D, epsilon=1e-3, tol=1e-9, max_iter=20000)
        plan = ot.round_to_feasible(sol.plan)
        assert float((D * plan).sum()) >= exact - 1e-12


def test_round_to_feasible_properties():
    rng = np.random.default_rng(13)
    T = rng.uniform(0, 1, (4, 6))
    T /= T.sum() * 1.07  # deliberately infeasible
    T[1] *= 1.9
    R = ot.round_to_feasible(T)
    assert np.all(R >= 0.0)
    assert ot.marginal_error(R) < 1e-13
    # already-feasible plans pass through unchanged up to float noise
    R2 = ot.round_to_feasible(R)
    assert np.max(np.abs(R2 - R)) < 1e-14
    with pytest.raises(ValueError):
        ot.round_to_feasible(np.array([[-0.1, 0.6], [0.3, 0.2]]))
