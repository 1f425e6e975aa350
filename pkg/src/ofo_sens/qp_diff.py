"""Derivatives of the QP minimizer with respect to all problem data.

At a non-degenerate solution the minimizer moves smoothly with the data,
and the movement solves the linearization of the KKT conditions.  Inactive
constraints decouple (their duals stay zero), so the linear system reduces
to the strictly active set:

    [ Gbar  Aact' ] [dw  ]   [ -(dGbar w* + dcbar + dAbar' lam*) ]
    [ Aact  0     ] [dlam] = [ dbbar_act - (dAbar w*)_act        ]

One factorization is shared across all unit perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DegenerateKkt, DimensionMismatch
from .qp_core import TOL_ACT, TOL_DUAL, ProjectionQp, QpSolution


@dataclass(frozen=True)
class QpDerivatives:
    """Minimizer Jacobians with respect to bbar, Abar, cbar and Gbar.

    dw_dA columns are ordered row-major over Abar entries (i * n_u + m);
    dw_dG likewise over Gbar entries.  dw_dG columns are per-entry: the
    derivative for a symmetric perturbation of the (i, j)/(j, i) pair is
    the sum of the two corresponding columns.
    """

    dw_db: np.ndarray
    dw_dA: np.ndarray
    dw_dc: np.ndarray
    dw_dG: np.ndarray
    weakly_active: tuple[int, ...] = ()

    @property
    def degenerate(self) -> bool:
        return bool(self.weakly_active)


def differentiate_qp(qp: ProjectionQp, sol: QpSolution) -> QpDerivatives:
    """Differentiate the minimizer at `sol` with respect to all QP data.

    Weakly active constraints (tight but with a vanishing dual) are treated
    as inactive and reported so callers can flag the step.
    """
    n, m = qp.n_u, qp.n_bar
    w, lam = sol.w_star, sol.lambda_star

    strict = [i for i in sol.active_set if lam[i] > TOL_DUAL]
    weak = tuple(i for i in sol.active_set if lam[i] <= TOL_DUAL)
    na = len(strict)

    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = qp.g_bar
    if na:
        a_act = qp.a_bar[strict]
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
    try:
        factor = lu_factor(kkt)
    except ValueError:
        raise DegenerateKkt("KKT block is singular") from None
    if np.min(np.abs(np.diag(factor[0]))) < 1e-12:
        raise DegenerateKkt("KKT block is singular (dependent active rows)")

    pos = {i: q for q, i in enumerate(strict)}
    n_rhs = m + m * n + n + n * n
    rhs = np.zeros((n + na, n_rhs))
    col = 0
    # d bbar_i = 1: only strictly active rows move the minimizer.
    for i in range(m):
        if i in pos:
            rhs[n + pos[i], col] = 1.0
        col += 1
    # d Abar_(i,m) = 1: enters stationarity through lam_i and row i's slack.
    for i in range(m):
        for j in range(n):
            if lam[i] > TOL_DUAL:
                rhs[j, col] = -lam[i]
            if i in pos:
                rhs[n + pos[i], col] = -w[j]
            col += 1
    # d cbar_j = 1.
    for j in range(n):
        rhs[j, col] = -1.0
        col += 1
    # d Gbar_(i,j) = 1 (per entry; symmetric use sums the pair).
    for i in range(n):
        for j in range(n):
            rhs[i, col] = -w[j]
            col += 1

    sols = lu_solve(factor, rhs)[:n]
    dw_db = sols[:, :m]
    dw_dA = sols[:, m : m + m * n]
    dw_dc = sols[:, m + m * n : m + m * n + n]
    dw_dG = sols[:, m + m * n + n :]
    return QpDerivatives(dw_db, dw_dA, dw_dc, dw_dG, weak)


def contract(qd: QpDerivatives, d_b: np.ndarray, d_A: np.ndarray,
             d_c: np.ndarray, d_G: np.ndarray) -> np.ndarray:
    """Chain the minimizer Jacobians with perturbations of the QP data.

    d_b: (n_bar, P), d_A: (n_bar, n_u, P), d_c: (n_u, P), d_G: (n_u, n_u, P)
    for P parameter directions; returns dw (n_u, P).
    """
    n = qd.dw_dc.shape[0]
    m = qd.dw_db.shape[1]
    p = d_b.shape[1]
    out = qd.dw_db @ d_b
    out += qd.dw_dA @ d_A.reshape(m * n, p)
    out += qd.dw_dc @ d_c
    out += qd.dw_dG @ d_G.reshape(n * n, p)
    return out


def projection_objective(qp: ProjectionQp, w: np.ndarray, m_bar: float) -> float:
    """Value of the original norm objective at w, given the dropped constant."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w.shape != (qp.n_u,):
        raise DimensionMismatch(f"w has shape {w.shape}, expected ({qp.n_u},)")
    return float(0.5 * w @ qp.g_bar @ w + w @ qp.c_bar + m_bar)
