r"""Entropic optimal transport in the log domain.

Solves, for a cost matrix :math:`D \in \mathbb{R}^{I\times J}` and marginal
weights :math:`u, \mu`,

.. math:: \min_{T \ge 0}\ \langle D, T\rangle + \varepsilon \langle T, \log T\rangle
          \quad \text{s.t.}\quad T\mathbf{1} = u,\ T^\top\mathbf{1} = \mu,

with the convention :math:`0 \log 0 = 0`. All scaling happens on dual
potentials, so tiny :math:`\varepsilon` is safe. The plan is recovered as
:math:`T_{ij} = \exp(f_i + \log K_{ij} + g_j)` with
:math:`\log K = -D/\varepsilon`.

An exhaustive assignment oracle and the closed-form gradient of the transport
objective with respect to sample locations live here too.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .nn_core import check_finite

DEFAULT_EPSILON = 0.05
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 5000


@dataclass(frozen=True)
class Marginals:
    """Source/target weight vectors; each must be a strictly positive
    probability vector."""

    u: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        for name, w in (("u", self.u), ("mu", self.mu)):
            w = np.asarray(w, np.float64)
            if w.ndim != 1:
                raise ValueError(f"{name} must be 1-d")
            if np.any(w <= 0.0):
                raise ValueError(f"{name} must be strictly positive")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError(f"{name} must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "u", np.asarray(self.u, np.float64))
        object.__setattr__(self, "mu", np.asarray(self.mu, np.float64))


def uniform_marginals(I, J) -> Marginals:
    return Marginals(np.full(I, 1.0 / I), np.full(J, 1.0 / J))


@dataclass(frozen=True)
class EotSolution:
    """Converged (or truncated) entropic transport solve."""

    plan: np.ndarray       # (I, J), nonnegative, marginals ~ (u, mu)
    f: np.ndarray          # source dual potential (I,)
    g: np.ndarray          # target dual potential (J,)
    value: float           # <D, T> + eps * <T, log T>
    transport_cost: float  # <D, T> alone
    iterations: int
    converged: bool
    epsilon: float


def pairwise_half_sq_euclidean(A, B) -> np.ndarray:
    r"""Cost matrix :math:`D_{ij} = \tfrac12 \lVert a_i - b_j \rVert^2` for
    point clouds A (I, d) and B (J, d)."""
    A = np.asarray(A, np.float64)
    B = np.asarray(B, np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"point clouds must be (I,d)/(J,d), got {A.shape}, {B.shape}")
    diff = A[:, None, :] - B[None, :, :]
    D = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
    # exact zeros on coincident points despite the expansion
    return np.maximum(D, 0.0)


def sinkhorn_log(
    D,
    marginals: Marginals | None = None,
    epsilon: float = DEFAULT_EPSILON,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EotSolution:
    r"""Log-domain Sinkhorn iteration.

    Starting from :math:`f = 0, g = 0`, alternate

    .. math::
        f_i \leftarrow \log u_i - \mathrm{LSE}_j(\log K_{ij} + g_j), \qquad
        g_j \leftarrow \log \mu_j - \mathrm{LSE}_i(\log K_{ij} + f_i),

    (the g-update uses the fresh f) and stop when
    :math:`\lVert \Delta f\rVert_1 + \lVert \Delta g\rVert_1 < \text{tol}`.

    Parameters
    ----------
    D : (I, J) cost matrix, finite entries.
    marginals : source/target weights; uniform when omitted.
    epsilon : entropic regularization strength, > 0.
    tol : L1 dual-increment stopping threshold.
    max_iter : iteration cap; hitting it sets converged=False.

    Returns
    -------
    EotSolution with the primal plan, duals, objective value, and iteration
    count. The plan always satisfies the column marginal to machine precision
    (g updated last); the row marginal is off by at most ~tol.
    """
    D = np.asarray(D, np.float64)
    if D.ndim != 2:
        raise ValueError("cost matrix must be 2-d")
    check_finite(D, "cost matrix")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if tol <= 0.0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    I, J = D.shape
    mg = uniform_marginals(I, J) if marginals is None else mg_check(marginals, I, J)
    log_u = np.log(mg.u)
    log_mu = np.log(mg.mu)

    logK = -D / epsilon
    f = np.zeros(I)
    g = np.zeros(J)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        f_prev = f
        g_prev = g
        # log-sum-exp with max subtraction, inlined: this loop dominates
        # runtime and scipy's generic reduction is several times slower
        M = logK + g
        mx = M.max(axis=1)
        f = log_u - mx - np.log(np.exp(M - mx[:, None]).sum(axis=1))
        M = logK + f[:, None]
        mx = M.max(axis=0)
        g = log_mu - mx - np.log(np.exp(M - mx).sum(axis=0))
        delta = np.abs(f - f_prev).sum() + np.abs(g - g_prev).sum()
        if delta < tol:
            converged = True
            break

    plan = np.exp(f[:, None] + logK + g[None, :])
    value, cost = eot_value(D, plan, epsilon, with_cost=True)
    return EotSolution(plan, f, g, value, cost, it, converged, epsilon)


def mg_check(marginals: Marginals, I, J) -> Marginals:
    if marginals.u.shape != (I,) or marginals.mu.shape != (J,):
        raise ValueError("marginal lengths do not match the cost matrix")
    return marginals


def eot_value(D, plan, epsilon, with_cost=False):
    r"""Objective :math:`\langle D, T\rangle + \varepsilon\langle T, \log T\rangle`
    with :math:`0\log 0 = 0`."""
    D = np.asarray(D, np.float64)
    plan = np.asarray(plan, np.float64)
    if plan.shape != D.shape:
        raise ValueError("plan and cost shapes differ")
    if np.any(plan < 0.0):
        raise ValueError("plan has negative entries")
    cost = float(np.sum(D * plan))
    value = cost + epsilon * float(xlogy(plan, plan).sum())
    if with_cost:
        return value, cost
    return value


def round_to_feasible(plan, marginals: Marginals | None = None) -> np.ndarray:
    """Project a nearly feasible plan onto the transport polytope: scale rows
    down to at most u, scale columns down to at most mu, then spread the
    remaining mass as the rank-one outer product of the two deficits.

    The result satisfies both marginals to machine precision and stays
    nonnegative, so its transport cost can never undercut the unregularized
    optimum. Use on truncated solves; at small epsilon the dual increments
    decay sublinearly and exact convergence may be out of reach.
    """
    T = np.asarray(plan, np.float64)
    if np.any(T < 0.0):
        raise ValueError("plan has negative entries")
    I, J = T.shape
    mg = uniform_marginals(I, J) if marginals is None else mg_check(marginals, I, J)
    row = T.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        T = T * np.minimum(1.0, np.where(row > 0, mg.u / row, 1.0))[:, None]
        col = T.sum(axis=0)
        T = T * np.minimum(1.0, np.where(col > 0, mg.mu / col, 1.0))[None, :]
    du = mg.u - T.sum(axis=1)
    dmu = mg.mu - T.sum(axis=0)
    s = du.sum()
    if s > 0.0:
        T = T + np.outer(du, dmu) / s
    return T


def marginal_error(plan, marginals: Marginals | None = None) -> float:
    """Max L1 violation of the two marginal constraints."""
    plan = np.asarray(plan, np.float64)
    I, J = plan.shape
    mg = uniform_marginals(I, J) if marginals is None else mg_check(marginals, I, J)
    row = np.abs(plan.sum(axis=1) - mg.u).sum()
    col = np.abs(plan.sum(axis=0) - mg.mu).sum()
    return max(row, col)


def exact_assignment_oracle(D):
    r"""Brute-force unregularized transport for square, uniformly weighted
    problems: enumerate all permutations and keep the cheapest, i.e.

    .. math:: \min_\sigma \tfrac1I \sum_i D_{i,\sigma(i)}.

    Ties keep the lexicographically first permutation. Deliberately
    independent of the Sinkhorn path; I <= 8 only.
    """
    D = np.asarray(D, np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("oracle needs a square cost matrix")
    I = D.shape[0]
    if I > 8:
        raise ValueError("oracle caps at 8x8 (factorial enumeration)")
    best_value = np.inf
    best_perm = None
    rows = range(I)
    for perm in itertools.permutations(rows):
        v = sum(D[i, perm[i]] for i in rows) / I
        if v < best_value:
            best_value = v
            best_perm = perm
    plan = np.zeros_like(D)
    for i in rows:
        plan[i, best_perm[i]] = 1.0 / I
    return float(best_value), plan


def grad_wrt_samples(A, B, plan):
    r"""Gradients of :math:`\sum_{ij} T_{ij}\,\tfrac12\lVert a_i-b_j\rVert^2`
    in the sample locations, holding the plan fixed (envelope form):

    .. math::
        \nabla_{a_i} = \sum_j T_{ij}(a_i - b_j), \qquad
        \nabla_{b_j} = \sum_i T_{ij}(b_j - a_i).
    """
    A = np.asarray(A, np.float64)
    B = np.asarray(B, np.float64)
    plan = np.asarray(plan, np.float64)
    if plan.shape != (A.shape[0], B.shape[0]):
        raise ValueError("plan shape does not match the clouds")
    row = plan.sum(axis=1)
    col = plan.sum(axis=0)
    gA = A * row[:, None] - plan @ B
    gB = B * col[:, None] - plan.T @ A
    return gA, gB
