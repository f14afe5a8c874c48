"""Poke at the log-domain transport solver on tiny instances.

Shows feasibility at several regularization strengths, agreement with the
brute-force assignment oracle, and the slowdown that appears when the cost
spread dwarfs epsilon.
"""

import numpy as np

from otdlab import ot_core as ot


def closed_form_2x2():
    # symmetric two-point instance: the optimal plan is the identity coupling
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = ot.sinkhorn_log(D, epsilon=0.05)
    print("2x2 cross cost, eps 0.05")
    print(f"  plan:\n{np.array_str(sol.plan, precision=6, suppress_small=True)}")
    print(f"  iterations: {sol.iterations}, converged: {sol.converged}")


def feasibility_sweep():
    rng = np.random.default_rng(0)
    print("\nfeasibility across epsilon")
    for eps in (0.01, 0.1, 1.0):
        worst = 0.0
        for _ in range(20):
            I, J = rng.integers(2, 33, size=2)
            D = rng.random((I, J))
            sol = ot.sinkhorn_log(D, epsilon=eps, tol=1e-10, max_iter=20000)
            worst = max(worst, ot.marginal_error(sol.plan))
        print(f"  eps {eps:>5}: worst marginal error {worst:.2e}")


def oracle_comparison():
    rng = np.random.default_rng(1)
    print("\nentropic cost vs exact assignment, 5x5 instances")
    for k in range(3):
        A = rng.normal(0, 1, (5, 2))
        B = rng.normal(0, 1, (5, 2))
        D = ot.pairwise_half_sq_euclidean(A, B)
        exact, _ = ot.exact_assignment_oracle(D)
        sol = ot.sinkhorn_log(D, epsilon=1e-3, tol=1e-9, max_iter=200000)
        cost = float(np.sum(D * ot.round_to_feasible(sol.plan)))
        print(f"  instance {k}: exact {exact:.6f}, sinkhorn {cost:.6f} "
              f"(+{(cost - exact) / exact * 100:.3f}%)")


def sublinear_stall():
    # when spread(D)/eps is large the dual increments decay like 1/iter and
    # the tolerance is out of reach at any sane budget; round_to_feasible
    # recovers exact marginals from the truncated plan
    rng = np.random.default_rng(2)
    A = rng.normal(0, 3, (16, 2))
    B = rng.normal(0, 3, (16, 2))
    D = ot.pairwise_half_sq_euclidean(A, B)
    spread = float(D.max() - D.min())
    eps = 0.01
    print(f"\nhard regime: spread {spread:.1f}, eps {eps} "
          f"(ratio {spread / eps:.0f})")
    for cap in (100, 1000, 10000):
        sol = ot.sinkhorn_log(D, epsilon=eps, tol=1e-9, max_iter=cap)
        err_raw = ot.marginal_error(sol.plan)
        err_rounded = ot.marginal_error(ot.round_to_feasible(sol.plan))
        print(f"  cap {cap:>6}: converged={sol.converged}, "
              f"marginal error {err_raw:.2e} -> rounded {err_rounded:.2e}")


def main():
    closed_form_2x2()
    feasibility_sweep()
    oracle_comparison()
    sublinear_stall()


if __name__ == "__main__":
    main()
