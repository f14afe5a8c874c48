"""How the transport objective reaches back to the samples.

Two stages: the envelope gradient of the entropic value with the plan held
fixed, then the full chain through both score functions. Both are checked
against finite differences here, the same way the test suite does it.
"""

import numpy as np

from otdlab import gen_model as gmod
from otdlab import nn_core as nc
from otdlab import objectives as obj
from otdlab import ot_core as ot


def envelope_gradient():
    rng = np.random.default_rng(0)
    A = rng.normal(0, 1, (6, 2))
    B = rng.normal(0, 1, (6, 2))
    eps = 0.5

    def value(Aq):
        D = ot.pairwise_half_sq_euclidean(Aq, B)
        return ot.sinkhorn_log(D, epsilon=eps, tol=1e-12, max_iter=50000).value

    sol = ot.sinkhorn_log(ot.pairwise_half_sq_euclidean(A, B), epsilon=eps,
                          tol=1e-12, max_iter=50000)
    ga, gb = ot.grad_wrt_samples(A, B, sol.plan)
    h = 1e-5
    i, d = 2, 1
    Ap, Am = A.copy(), A.copy()
    Ap[i, d] += h
    Am[i, d] -= h
    fd = (value(Ap) - value(Am)) / (2 * h)
    print("envelope gradient, one probed coordinate")
    print(f"  analytic {ga[i, d]: .8f}   finite difference {fd: .8f}")
    # moving a target point works too, through the other marginal
    print(f"  target-side row norm example: {np.linalg.norm(gb[0]):.6f}")


def full_chain():
    # fake and real score clouds both move when x_t moves; the chain combines
    # the frozen-plan cost gradient with each score function's vjp. Both
    # routes below use one fixed iteration budget: the truncated solve is a
    # smooth deterministic map, so its finite differences are clean even in
    # the regime where full convergence is out of reach.
    rng = np.random.default_rng(3)
    mix = gmod.gm_ring(3, radius=2.0, sigma=0.4)
    net = nc.init_mlp([2 + 8, 10, 2], rng)
    fake = obj.DenoiserScore(net, 0.5)
    real = obj.AnalyticMixtureScore(mix, 0.5)
    X = rng.normal(0, 1, (4, 2))
    eps, tol, cap = 0.1, 1e-9, 5000

    res = obj.otd_gradient(X, fake, real, epsilon=eps, tol=tol, max_iter=cap)

    def value(Xq):
        D = ot.pairwise_half_sq_euclidean(fake(Xq), real(Xq))
        return ot.sinkhorn_log(D, epsilon=eps, tol=tol, max_iter=cap).value

    h = 1e-4
    fd = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        fd[idx] = (value(Xp) - value(Xm)) / (2 * h)
    rel = np.linalg.norm(res.grad - fd) / np.linalg.norm(fd)
    print("\nend-to-end transport gradient at the noised samples")
    print(f"  solver iterations {res.iterations} (converged={res.converged})")
    print(f"  relative error vs finite differences: {rel:.2e}")


def stale_handling():
    # a starved budget marks the direction stale instead of returning junk;
    # the training loop skips the transport term on such steps
    rng = np.random.default_rng(4)
    mix = gmod.gm_ring(3, radius=2.0, sigma=0.4)
    net = nc.init_mlp([2 + 8, 10, 2], rng)
    res = obj.otd_gradient(rng.normal(0, 1, (6, 2)),
                           obj.DenoiserScore(net, 0.5),
                           obj.AnalyticMixtureScore(mix, 0.5),
                           epsilon=0.05, tol=1e-14, max_iter=3)
    print(f"\nstarved solve: converged={res.converged}, "
          f"iterations={res.iterations} -> caller falls back to the "
          "score-matching direction alone")


def main():
    envelope_gradient()
    full_chain()
    stale_handling()


if __name__ == "__main__":
    main()
