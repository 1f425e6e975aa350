"""The closed loop: assemble each step's projection QP, solve it, advance.

Per step the controller measures y = h(u), builds the QP for the metric
projection of the composed gradient onto the feasible direction set, and
applies u <- u + alpha w*.  The true plant always supplies y; an optional
mismatch schedule perturbs only the gradient the controller uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OfoSensError
from .plants import ConstraintSpec, MismatchSchedule, PlantModel, apply_mismatch
from .qp_core import ProjectionQp, QpSolution, check_nondegenerate, solve_qp


@dataclass(frozen=True)
class OfoConfig:
    """Controller parameters: step size (or schedule), metric, start, horizon."""

    alpha: float | np.ndarray
    metric_g: np.ndarray
    u0: np.ndarray
    horizon: int

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.metric_g, dtype=float))
        u0 = np.atleast_1d(np.asarray(self.u0, dtype=float))
        object.__setattr__(self, "metric_g", g)
        object.__setattr__(self, "u0", u0)
        if self.horizon < 1:
            raise DimensionMismatch(f"horizon must be >= 1, got {self.horizon}")
        alpha = self.alpha
        if np.ndim(alpha) > 0:
            alpha = np.asarray(alpha, dtype=float)
            if alpha.shape != (self.horizon,):
                raise DimensionMismatch(
                    f"alpha schedule has length {alpha.shape}, horizon {self.horizon}")
            object.__setattr__(self, "alpha", alpha)
            if np.any(alpha <= 0.0):
                raise DimensionMismatch("every alpha in the schedule must be > 0")
        elif float(alpha) <= 0.0:
            raise DimensionMismatch("alpha must be > 0")
        if g.shape != (u0.shape[0], u0.shape[0]):
            raise DimensionMismatch(f"metric_g {g.shape} vs u0 {u0.shape}")
        if np.max(np.abs(g - g.T), initial=0.0) > 1e-12:
            raise DimensionMismatch("metric_g is not symmetric")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise DimensionMismatch("metric_g is not positive definite") from None

    def alpha_at(self, k: int) -> float:
        if np.ndim(self.alpha) > 0:
            return float(self.alpha[k])
        return float(self.alpha)

    def with_alpha(self, alpha) -> "OfoConfig":
        return OfoConfig(alpha, self.metric_g, self.u0, self.horizon)

    def with_u0(self, u0) -> "OfoConfig":
        return OfoConfig(self.alpha, self.metric_g, u0, self.horizon)

    def with_metric(self, g) -> "OfoConfig":
        return OfoConfig(self.alpha, g, self.u0, self.horizon)

    def with_horizon(self, horizon: int) -> "OfoConfig":
        alpha = self.alpha
        if np.ndim(alpha) > 0:
            raise DimensionMismatch("cannot change horizon with an alpha schedule")
        return OfoConfig(alpha, self.metric_g, self.u0, horizon)


@dataclass(frozen=True)
class TrajectoryRecord:
    """State after k steps plus the projection solution taken at step k."""

    k: int
    u: np.ndarray
    y: np.ndarray
    phi: float
    w_star: np.ndarray | None
    lambda_star: np.ndarray | None
    active_set: tuple[int, ...]
    degenerate: bool


def assemble_projection(u, y, grad_h_used, grad_phi, alpha, metric_g,
                        spec: ConstraintSpec) -> ProjectionQp:
    """Build the step's QP from measurements and the controller's gradient.

    grad_phi is the (1 x (n_u + n_y)) row [grad_phi_u, grad_phi_y].
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    grad_h_used = np.atleast_2d(np.asarray(grad_h_used, dtype=float))
    grad_phi = np.atleast_2d(np.asarray(grad_phi, dtype=float))
    n_u, n_y = u.shape[0], y.shape[0]
    if grad_h_used.shape != (n_y, n_u):
        raise DimensionMismatch(f"grad_h_used {grad_h_used.shape}, expected ({n_y},{n_u})")
    if grad_phi.shape != (1, n_u + n_y):
        raise DimensionMismatch(f"grad_phi {grad_phi.shape}, expected (1,{n_u + n_y})")
    if spec.a_mat.shape[1] != n_u or spec.c_mat.shape[1] != n_y:
        raise DimensionMismatch("constraint matrices do not match plant dimensions")
    gpu = grad_phi[:, :n_u]
    gpy = grad_phi[:, n_u:]
    a_bar = np.vstack([alpha * spec.a_mat, alpha * spec.c_mat @ grad_h_used])
    b_bar = np.concatenate([spec.b_vec - spec.a_mat @ u, spec.d_vec - spec.c_mat @ y])
    c_bar = 2.0 * (gpu[0] + gpy[0] @ grad_h_used)
    return ProjectionQp(2.0 * metric_g, c_bar, a_bar, b_bar)


class StepError(OfoSensError):
    """Wraps a QP failure with the timestep it occurred at."""

    def __init__(self, k: int, cause: Exception):
        super().__init__(f"step {k}: {cause}")
        self.k = k
        self.cause = cause


def _beta_at(mismatch: MismatchSchedule | None, plant: PlantModel, k: int):
    if mismatch is None:
        return None
    return mismatch.at(k)


def ofo_step(u, plant: PlantModel, cfg: OfoConfig, spec: ConstraintSpec,
             beta_k=None, k: int = 0, warm_start=None):
    """One closed-loop step.

    Returns (record, u_next, qp, sol, grad_h_true, grad_h_used).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = plant.h(u)
    grad_h_true = plant.grad_h(u)
    if beta_k is not None:
        if plant.mismatch_pattern is None:
            raise DimensionMismatch("plant has no mismatch pattern")
        grad_h_used = apply_mismatch(grad_h_true, beta_k, plant.mismatch_pattern)
    else:
        grad_h_used = grad_h_true
    grad_phi = np.hstack([plant.grad_phi_u(u, y), plant.grad_phi_y(u, y)])
    alpha = cfg.alpha_at(k)
    qp = assemble_projection(u, y, grad_h_used, grad_phi, alpha, cfg.metric_g, spec)
    try:
        sol = solve_qp(qp, warm_start=warm_start)
    except OfoSensError as exc:
        raise StepError(k, exc) from exc
    report = check_nondegenerate(qp, sol)
    record = TrajectoryRecord(
        k=k, u=u.copy(), y=y, phi=plant.phi(u, y),
        w_star=sol.w_star, lambda_star=sol.lambda_star,
        active_set=sol.active_set, degenerate=not report.ok,
    )
    u_next = u + alpha * sol.w_star
    return record, u_next, qp, sol, grad_h_true, grad_h_used


def run(plant: PlantModel, cfg: OfoConfig, spec: ConstraintSpec,
        mismatch: MismatchSchedule | None = None) -> list[TrajectoryRecord]:
    """Run the loop for the full horizon; record horizon+1 states.

    The final record carries the terminal state with no projection solution.
    """
    if mismatch is not None and mismatch.horizon < cfg.horizon:
        raise DimensionMismatch(
            f"mismatch schedule covers {mismatch.horizon} steps, horizon is {cfg.horizon}")
    records: list[TrajectoryRecord] = []
    u = cfg.u0
    warm = None
    for k in range(cfg.horizon):
        beta_k = _beta_at(mismatch, plant, k)
        record, u, _, sol, _, _ = ofo_step(u, plant, cfg, spec, beta_k, k, warm)
        warm = sol.active_set
        records.append(record)
    y = plant.h(u)
    records.append(TrajectoryRecord(cfg.horizon, u.copy(), y, plant.phi(u, y),
                                    None, None, (), False))
    return records
