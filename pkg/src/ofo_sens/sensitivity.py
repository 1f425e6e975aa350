"""Forward-in-time accumulation of closed-form sensitivities.

The input recursion u^{k+1} = u^k + alpha w^k chains per-step minimizer
derivatives: each stored block du^k/dp_s is propagated through the step
map via K = sum_X dw_X (dX/du + dX/dy dy/du), and a new block enters from
the parameter's direct appearance in the step-k QP data.  Contracting the
blocks with the composed objective gradient yields the instantaneous and
total sensitivities of the running objective.

The controller's (possibly mismatched) gradient appears wherever the QP
data hold grad h; the true plant Jacobian appears wherever dy/du does.
Keeping the two slots separate is essential whenever beta != 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch, MissingSecondDerivatives
from .ofo import OfoConfig, TrajectoryRecord, ofo_step
from .plants import ConstraintSpec, MismatchSchedule, PlantModel
from .qp_core import ProjectionQp, QpSolution
from .qp_diff import QpDerivatives, contract, differentiate_qp


# --------------------------------------------------------------------------
# Parameter targets


@dataclass(frozen=True)
class GradientMismatch:
    """Per-well additive gradient error, one parameter per selected well."""

    wells: tuple[int, ...] | None = None

    def dim(self, plant: PlantModel, cfg: OfoConfig) -> int:
        if plant.mismatch_pattern is None:
            raise ConfigError("plant has no mismatch pattern")
        return len(self.well_indices(plant))

    def well_indices(self, plant: PlantModel) -> tuple[int, ...]:
        if self.wells is None:
            return tuple(range(len(plant.mismatch_pattern)))
        n = len(plant.mismatch_pattern)
        if any(w < 0 or w >= n for w in self.wells):
            raise ConfigError(f"well index out of range: {self.wells}")
        return tuple(self.wells)


@dataclass(frozen=True)
class MetricG:
    """Entries of the projection metric, upper triangle by default."""

    entries: tuple[tuple[int, int], ...] | None = None

    def entry_indices(self, cfg: OfoConfig) -> tuple[tuple[int, int], ...]:
        n = cfg.metric_g.shape[0]
        if self.entries is None:
            return tuple((i, j) for i in range(n) for j in range(i, n))
        for i, j in self.entries:
            if not (0 <= i <= j < n):
                raise ConfigError(f"metric entry out of range: ({i},{j})")
        return tuple(self.entries)

    def dim(self, plant: PlantModel, cfg: OfoConfig) -> int:
        return len(self.entry_indices(cfg))


@dataclass(frozen=True)
class StepSize:
    """The step size, treated as an independent parameter per timestep."""

    def dim(self, plant: PlantModel, cfg: OfoConfig) -> int:
        return 1


@dataclass(frozen=True)
class InitialInput:
    """The starting input u0 (a single parameter block, not per-timestep)."""

    def dim(self, plant: PlantModel, cfg: OfoConfig) -> int:
        return plant.n_u


ParameterTarget = GradientMismatch | MetricG | StepSize | InitialInput


def target_label(target: ParameterTarget) -> str:
    if isinstance(target, GradientMismatch):
        return "mismatch"
    if isinstance(target, MetricG):
        return "metric_g"
    if isinstance(target, StepSize):
        return "alpha"
    return "u0"


# --------------------------------------------------------------------------
# Per-step Jacobians of the QP data


@dataclass(frozen=True)
class StepState:
    """Everything known at step k that the Jacobians depend on."""

    k: int
    u: np.ndarray
    y: np.ndarray
    grad_h_true: np.ndarray
    grad_h_used: np.ndarray
    hess_h: np.ndarray
    grad_phi_u: np.ndarray
    grad_phi_y: np.ndarray
    hess_phi_uu: np.ndarray
    hess_phi_uy: np.ndarray
    hess_phi_yy: np.ndarray
    alpha: float
    qp: ProjectionQp
    sol: QpSolution
    w: np.ndarray


def _eval_step_state(plant: PlantModel, k: int, u, y, grad_h_true, grad_h_used,
                     alpha, qp, sol) -> StepState:
    try:
        hess_h = plant.hess_h(u)
        puu = plant.hess_phi_uu(u, y)
        puy = plant.hess_phi_uy(u, y)
        pyy = plant.hess_phi_yy(u, y)
    except NotImplementedError:
        raise MissingSecondDerivatives(
            f"{type(plant).__name__} does not provide second derivatives") from None
    return StepState(k, u, y, grad_h_true, grad_h_used, hess_h,
                     plant.grad_phi_u(u, y), plant.grad_phi_y(u, y),
                     puu, puy, pyy, alpha, qp, sol, sol.w_star)


def state_jacobians(state: StepState, spec: ConstraintSpec):
    """Total derivatives of (bbar, Abar, cbar) with respect to the input.

    dy/du is the true plant Jacobian; grad_h_used appears only where the
    QP data themselves contain the controller's gradient.  Gbar does not
    depend on the state.
    """
    a_mat, c_mat = spec.a_mat, spec.c_mat
    n_c1 = spec.n_c1
    n_u = state.u.shape[0]
    n_bar = n_c1 + spec.n_c2
    db_du = np.vstack([-a_mat, -c_mat @ state.grad_h_true])
    dA_du = np.zeros((n_bar, n_u, n_u))
    dA_du[n_c1:] = state.alpha * np.einsum("qr,rmj->qmj", c_mat, state.hess_h)
    gpy = state.grad_phi_y[0]
    bent = np.einsum("rmj,r->mj", state.hess_h, gpy)
    dc_du = 2.0 * (
        state.hess_phi_uu
        + state.hess_phi_uy @ state.grad_h_true
        + bent
        + state.grad_h_used.T @ (state.hess_phi_uy.T + state.hess_phi_yy @ state.grad_h_true)
    )
    return db_du, dA_du, dc_du


def direct_jacobians(target: ParameterTarget, state: StepState, spec: ConstraintSpec,
                     plant: PlantModel, cfg: OfoConfig):
    """Partial derivatives of the QP data with respect to the step-k parameter."""
    n_u = state.u.shape[0]
    n_c1 = spec.n_c1
    n_bar = n_c1 + spec.n_c2
    p = target.dim(plant, cfg)
    db = np.zeros((n_bar, p))
    dA = np.zeros((n_bar, n_u, p))
    dc = np.zeros((n_u, p))
    dG = np.zeros((n_u, n_u, p))
    if isinstance(target, GradientMismatch):
        gpy = state.grad_phi_y[0]
        for idx, well in enumerate(target.well_indices(plant)):
            r, c = plant.mismatch_pattern[well]
            dA[n_c1:, c, idx] = state.alpha * spec.c_mat[:, r]
            dc[c, idx] = 2.0 * gpy[r]
    elif isinstance(target, MetricG):
        for idx, (i, j) in enumerate(target.entry_indices(cfg)):
            dG[i, j, idx] += 2.0
            if i != j:
                dG[j, i, idx] += 2.0
    elif isinstance(target, StepSize):
        dA[:n_c1, :, 0] = spec.a_mat
        dA[n_c1:, :, 0] = spec.c_mat @ state.grad_h_used
    # InitialInput: the QP data never contain u0 directly.
    return db, dA, dc, dG


def step_param_jacobians(state: StepState, plant: PlantModel, cfg: OfoConfig,
                         spec: ConstraintSpec, target: ParameterTarget) -> dict:
    """Direct and state parts of the QP-data derivatives at one step."""
    db_du, dA_du, dc_du = state_jacobians(state, spec)
    db, dA, dc, dG = direct_jacobians(target, state, spec, plant, cfg)
    return {
        "direct": {"d_bbar": db, "d_abar": dA, "d_cbar": dc, "d_gbar": dG},
        "state": {"d_bbar": db_du, "d_abar": dA_du, "d_cbar": dc_du},
    }


def step_transition(qd: QpDerivatives, state: StepState, spec: ConstraintSpec) -> np.ndarray:
    """K: how the minimizer moves per unit change of the current input."""
    db_du, dA_du, dc_du = state_jacobians(state, spec)
    n_u = state.u.shape[0]
    return contract(qd, db_du, dA_du, dc_du, np.zeros((n_u, n_u, n_u)))


# --------------------------------------------------------------------------
# Accumulation


class SensitivityAccumulator:
    """The growing stack of du^k/dp_s blocks for one parameter target."""

    def __init__(self, target: ParameterTarget, plant: PlantModel, cfg: OfoConfig):
        self.target = target
        self.n_u = plant.n_u
        self.n_p = target.dim(plant, cfg)
        self.k = 0
        self.degenerate_from: int | None = None
        if isinstance(target, InitialInput):
            self.u0_block = np.eye(self.n_u)
            self.blocks = None
        else:
            self.u0_block = None
            self.blocks = np.zeros((0, self.n_u, self.n_p))

    def phi_rows(self, g_row: np.ndarray) -> np.ndarray:
        """d phi^k / d p_s rows for all stored s, given the composed gradient."""
        if self.u0_block is not None:
            return (g_row @ self.u0_block).reshape(1, self.n_p)
        if self.blocks.shape[0] == 0:
            return np.zeros((0, self.n_p))
        return np.einsum("j,sjp->sp", g_row[0], self.blocks)

    def advance(self, qd: QpDerivatives, k_matrix: np.ndarray, state: StepState,
                spec: ConstraintSpec, plant: PlantModel, cfg: OfoConfig) -> None:
        """Push every block through step k and append the step's direct block."""
        if state.k != self.k:
            raise DimensionMismatch(f"accumulator at step {self.k}, state at {state.k}")
        if qd.degenerate and self.degenerate_from is None:
            self.degenerate_from = state.k
        alpha = state.alpha
        if self.u0_block is not None:
            self.u0_block = self.u0_block + alpha * (k_matrix @ self.u0_block)
        else:
            if self.blocks.shape[0]:
                self.blocks = self.blocks + alpha * np.einsum(
                    "ij,sjp->sip", k_matrix, self.blocks)
            db, dA, dc, dG = direct_jacobians(self.target, state, spec, plant, cfg)
            k_direct = contract(qd, db, dA, dc, dG)
            new_block = alpha * k_direct
            if isinstance(self.target, StepSize):
                new_block = new_block + state.w.reshape(self.n_u, 1)
            self.blocks = np.concatenate([self.blocks, new_block[None]], axis=0)
        self.k += 1


@dataclass
class SensitivityReport:
    """Sensitivities of the running objective for one parameter target.

    instantaneous[s] is d phi^{T_F} / d p_s (a single row for u0);
    per_step_totals[k] sums the rows available at time k, i.e. the derivative
    with respect to a uniform parameter change applied at all past steps.
    """

    target: ParameterTarget
    total: np.ndarray
    instantaneous: np.ndarray
    per_step_totals: np.ndarray
    heatmap: list[np.ndarray] | None = None
    degenerate_from: int | None = None

    @property
    def reliable(self) -> bool:
        return self.degenerate_from is None


def objective_sensitivity(acc: SensitivityAccumulator, plant: PlantModel,
                          u: np.ndarray) -> np.ndarray:
    """Rows d phi^k / d p_s at the accumulator's current step, state u^k."""
    g_row = plant.composed_gradient(u)
    return acc.phi_rows(g_row)


def run_with_sensitivity(plant: PlantModel, cfg: OfoConfig, spec: ConstraintSpec,
                         targets: list[ParameterTarget],
                         mismatch: MismatchSchedule | None = None,
                         record_heatmap: bool = False):
    """Run the closed loop once and accumulate all requested sensitivities.

    Returns (trajectory, reports) with one SensitivityReport per target,
    keyed by target.
    """
    if mismatch is not None and mismatch.horizon < cfg.horizon:
        raise DimensionMismatch("mismatch schedule shorter than the horizon")
    horizon = cfg.horizon
    accs = [SensitivityAccumulator(t, plant, cfg) for t in targets]
    totals = [np.zeros((horizon + 1, a.n_p)) for a in accs]
    heatmaps: list[list[np.ndarray] | None] = [
        [] if record_heatmap else None for _ in accs]
    records: list[TrajectoryRecord] = []
    last_rows = [np.zeros((0, a.n_p)) for a in accs]
    u = cfg.u0
    warm = None
    for k in range(horizon + 1):
        g_row = plant.composed_gradient(u)
        for i, acc in enumerate(accs):
            rows = acc.phi_rows(g_row)
            last_rows[i] = rows
            totals[i][k] = rows.sum(axis=0)
            if heatmaps[i] is not None:
                heatmaps[i].append(rows)
        if k == horizon:
            y = plant.h(u)
            records.append(TrajectoryRecord(k, u.copy(), y, plant.phi(u, y),
                                            None, None, (), False))
            break
        beta_k = mismatch.at(k) if mismatch is not None else None
        record, u_next, qp, sol, gh_true, gh_used = ofo_step(
            u, plant, cfg, spec, beta_k, k, warm)
        records.append(record)
        warm = sol.active_set
        qd = differentiate_qp(qp, sol)
        state = _eval_step_state(plant, k, record.u, record.y, gh_true, gh_used,
                                 cfg.alpha_at(k), qp, sol)
        k_matrix = step_transition(qd, state, spec)
        for acc in accs:
            acc.advance(qd, k_matrix, state, spec, plant, cfg)
        u = u_next
    reports = []
    for i, acc in enumerate(accs):
        inst = last_rows[i]
        if acc.u0_block is None and inst.shape[0] < horizon:
            # structurally zero rows for s >= number of executed steps
            pad = np.zeros((horizon - inst.shape[0], acc.n_p))
            inst = np.vstack([inst, pad])
        reports.append(SensitivityReport(
            target=acc.target,
            total=totals[i][horizon].copy(),
            instantaneous=inst,
            per_step_totals=totals[i],
            heatmap=heatmaps[i],
            degenerate_from=acc.degenerate_from,
        ))
    return records, reports


# --------------------------------------------------------------------------
# First-order mismatch estimate

# Well-to-platform grouping of the gas-lift study: wells (1,2) and (3,4,5).
DEFAULT_MISMATCH_GROUPS: tuple[tuple[int, ...], ...] = ((0, 1), (2, 3, 4))


def first_order_estimate(sensitivities, delta_beta,
                         groups: tuple[tuple[int, ...], ...] | None = DEFAULT_MISMATCH_GROUPS) -> float:
    """Worst-case first-order bound on the objective change from mismatch.

    `sensitivities` are per-well magnitudes (e.g. the maximal absolute total
    sensitivity over the run).  The default aggregation takes the dominant
    term per well group and sums the groups, reporting the change as a
    (negative) worst-case decrease.  Pass groups=None for a plain sum.
    """
    s = np.abs(np.asarray(sensitivities, dtype=float).reshape(-1))
    db = np.asarray(delta_beta, dtype=float).reshape(-1)
    if s.shape != db.shape:
        raise DimensionMismatch(f"sensitivities {s.shape} vs delta_beta {db.shape}")
    terms = np.abs(s * db)
    if groups is None:
        bound = float(terms.sum())
    else:
        idx = sorted(i for g in groups for i in g)
        if idx != list(range(s.size)):
            raise DimensionMismatch("groups must partition the well indices")
        bound = float(sum(terms[list(g)].max() for g in groups if g))
    return -bound


def max_abs_total_sensitivity(report: SensitivityReport) -> np.ndarray:
    """Per-parameter max |total sensitivity| over the whole run."""
    return np.max(np.abs(report.per_step_totals), axis=0)
