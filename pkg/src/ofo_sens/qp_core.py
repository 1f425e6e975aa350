"""Exact solution of the small dense convex QP solved at every controller step.

The problem is

    min_w  1/2 w' Gbar w + w' cbar   subject to   Abar w <= bbar

with Gbar symmetric positive definite, solved by a primal active-set
method.  Problems here are tiny (a handful of variables, at most a few
dozen inequality rows), so exactness and determinism matter more than
scalability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, Infeasible, NumericalFailure

# Membership tolerance on a_i w - b_i for calling a constraint active.
TOL_ACT = 1e-9
# Duals below this are treated as zero (weakly active).
TOL_DUAL = 1e-10

_MAX_ITER = 200


@dataclass(frozen=True)
class ProjectionQp:
    """One timestep's projection QP data (Gbar, cbar, Abar, bbar)."""

    g_bar: np.ndarray
    c_bar: np.ndarray
    a_bar: np.ndarray
    b_bar: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.g_bar, dtype=float))
        c = np.atleast_1d(np.asarray(self.c_bar, dtype=float))
        a = np.asarray(self.a_bar, dtype=float).reshape(-1, g.shape[0])
        b = np.atleast_1d(np.asarray(self.b_bar, dtype=float))
        object.__setattr__(self, "g_bar", g)
        object.__setattr__(self, "c_bar", c)
        object.__setattr__(self, "a_bar", a)
        object.__setattr__(self, "b_bar", b)
        n = g.shape[0]
        if g.shape != (n, n) or c.shape != (n,):
            raise DimensionMismatch(f"g_bar {g.shape} / c_bar {c.shape}")
        if a.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"a_bar has {a.shape[0]} rows, b_bar {b.shape[0]}")
        if np.max(np.abs(g - g.T), initial=0.0) > 1e-12:
            raise DimensionMismatch("g_bar is not symmetric")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise NumericalFailure("g_bar is not positive definite") from None

    @property
    def n_u(self) -> int:
        return self.g_bar.shape[0]

    @property
    def n_bar(self) -> int:
        return self.a_bar.shape[0]


@dataclass(frozen=True)
class QpSolution:
    """Minimizer, duals, active set and the worst KKT violation."""

    w_star: np.ndarray
    lambda_star: np.ndarray
    active_set: tuple[int, ...]
    kkt_residual: float


def _feasible(qp: ProjectionQp, w: np.ndarray, tol: float = TOL_ACT) -> bool:
    if qp.n_bar == 0:
        return True
    return bool(np.all(qp.a_bar @ w - qp.b_bar <= tol))


def _phase1(qp: ProjectionQp) -> np.ndarray:
    """Find a feasible starting point, or raise Infeasible.

    Minimizes the worst constraint violation t subject to Abar w - t <= bbar.
    """
    n, m = qp.n_u, qp.n_bar
    a_ub = np.hstack([qp.a_bar, -np.ones((m, 1))])
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=qp.b_bar, bounds=bounds, method="highs")
    if not res.success:
        raise NumericalFailure(f"phase-1 LP failed: {res.message}")
    if res.x[-1] > 1e-7:
        raise Infeasible(f"no w satisfies Abar w <= bbar (violation {res.x[-1]:.3e})")
    return res.x[:n]


def _eqp(qp: ProjectionQp, w: np.ndarray, working: list[int]):
    """Step p and duals for the equality-constrained subproblem on `working`."""
    n = qp.n_u
    na = len(working)
    grad = qp.g_bar @ w + qp.c_bar
    if na == 0:
        try:
            p = np.linalg.solve(qp.g_bar, -grad)
        except np.linalg.LinAlgError:
            raise NumericalFailure("singular Hessian in subproblem") from None
        return p, np.zeros(0)
    a_w = qp.a_bar[working]
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = qp.g_bar
    kkt[:n, n:] = a_w.T
    kkt[n:, :n] = a_w
    rhs = np.concatenate([-grad, np.zeros(na)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        raise NumericalFailure("singular active-set KKT system") from None
    return sol[:n], sol[n:]


def solve_qp(qp: ProjectionQp, warm_start: tuple[int, ...] | None = None) -> QpSolution:
    """Solve the projection QP exactly with a primal active-set method.

    `warm_start` is the previous timestep's active set; OFO solves a nearly
    identical QP every step, so the warm guess usually verifies immediately.
    """
    n, m = qp.n_u, qp.n_bar

    if m == 0:
        w = np.linalg.solve(qp.g_bar, -qp.c_bar)
        sol = QpSolution(w, np.zeros(0), (), 0.0)
        return QpSolution(w, np.zeros(0), (), kkt_residual(qp, sol))

    if warm_start:
        sol = _try_warm(qp, warm_start)
        if sol is not None:
            return sol

    # Cold start: unconstrained minimizer if feasible, else 0, else phase 1.
    w = np.linalg.solve(qp.g_bar, -qp.c_bar)
    working: list[int] = []
    if not _feasible(qp, w):
        w = np.zeros(n)
        if not _feasible(qp, w):
            w = _phase1(qp)
        working = _independent_tight(qp, w)

    for _ in range(_MAX_ITER):
        p, mu = _eqp(qp, w, working)
        # zero-step test scaled to the iterate (phase 1 can start far out)
        p_tol = 1e-11 * max(1.0, np.max(np.abs(w), initial=0.0))
        if np.max(np.abs(p), initial=0.0) <= p_tol:
            if mu.size == 0 or np.min(mu) >= -TOL_DUAL:
                return _pack(qp, w, working, mu)
            # Drop the most negative dual; ties break on the lowest row index.
            worst = np.min(mu)
            j = min(working[i] for i in range(len(working)) if mu[i] == worst)
            working.remove(j)
            continue
        # Longest feasible step along p; blocking row with the smallest ratio
        # enters (lowest index first on ties).
        step = 1.0
        block = -1
        ap = qp.a_bar @ p
        slack = qp.b_bar - qp.a_bar @ w
        for i in range(m):
            if i in working or ap[i] <= 1e-13:
                continue
            ratio = max(slack[i], 0.0) / ap[i]
            if ratio < step - 1e-14:
                step, block = ratio, i
        w = w + step * p
        if block >= 0:
            working.append(block)
            working.sort()
    raise NumericalFailure("active-set iteration limit reached")


def _independent_tight(qp: ProjectionQp, w: np.ndarray) -> list[int]:
    """Tight rows at w, greedily reduced to a linearly independent subset."""
    tight = [i for i in range(qp.n_bar) if qp.a_bar[i] @ w - qp.b_bar[i] >= -TOL_ACT]
    picked: list[int] = []
    for i in tight:
        cand = picked + [i]
        if np.linalg.matrix_rank(qp.a_bar[cand]) == len(cand):
            picked.append(i)
        if len(picked) == qp.n_u:
            break
    return picked


def _try_warm(qp: ProjectionQp, active: tuple[int, ...]) -> QpSolution | None:
    """Solve assuming `active` holds with equality; accept only if it verifies."""
    working = [i for i in active if i < qp.n_bar]
    if len(working) > qp.n_u:
        return None
    n, na = qp.n_u, len(working)
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = qp.g_bar
    if na:
        a_w = qp.a_bar[working]
        kkt[:n, n:] = a_w.T
        kkt[n:, :n] = a_w
    rhs = np.concatenate([-qp.c_bar, qp.b_bar[working]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    w, mu = sol[:n], sol[n:]
    if na and np.min(mu) < -TOL_DUAL:
        return None
    if not _feasible(qp, w):
        return None
    return _pack(qp, w, working, mu)


def _pack(qp: ProjectionQp, w: np.ndarray, working: list[int], mu: np.ndarray) -> QpSolution:
    lam = np.zeros(qp.n_bar)
    for idx, i in enumerate(working):
        lam[i] = max(mu[idx], 0.0)
    slack = qp.a_bar @ w - qp.b_bar if qp.n_bar else np.zeros(0)
    active = tuple(i for i in range(qp.n_bar) if slack[i] >= -TOL_ACT)
    sol = QpSolution(w.copy(), lam, active, 0.0)
    return QpSolution(w.copy(), lam, active, kkt_residual(qp, sol))


def kkt_residual(qp: ProjectionQp, sol: QpSolution) -> float:
    """Worst violation over the four KKT conditions (inf-norms)."""
    w, lam = sol.w_star, sol.lambda_star
    stat = qp.g_bar @ w + qp.c_bar
    if qp.n_bar:
        stat = stat + qp.a_bar.T @ lam
        slack = qp.a_bar @ w - qp.b_bar
        primal = max(np.max(slack, initial=0.0), 0.0)
        comp = np.max(np.abs(lam * slack), initial=0.0)
        dual = max(-np.min(lam, initial=0.0), 0.0)
    else:
        primal = comp = dual = 0.0
    return float(max(np.max(np.abs(stat), initial=0.0), primal, comp, dual))


@dataclass(frozen=True)
class NondegeneracyReport:
    strict_complementarity: bool
    active_rows_independent: bool
    min_active_dual: float = field(default=np.inf)
    min_singular_value: float = field(default=np.inf)

    @property
    def ok(self) -> bool:
        return self.strict_complementarity and self.active_rows_independent


def check_nondegenerate(qp: ProjectionQp, sol: QpSolution, tol: float = TOL_DUAL) -> NondegeneracyReport:
    """Strict complementarity and full row rank of the active constraint rows."""
    active = list(sol.active_set)
    if not active:
        return NondegeneracyReport(True, True)
    duals = sol.lambda_star[active]
    min_dual = float(np.min(duals))
    rows = qp.a_bar[active]
    smin = float(np.min(np.linalg.svd(rows, compute_uv=False))) if len(active) else np.inf
    return NondegeneracyReport(min_dual > tol, smin > tol, min_dual, smin)
