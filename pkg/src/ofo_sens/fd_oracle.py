"""Finite-difference differentiation of the whole closed loop.

Every analytic sensitivity in this package is validated against re-running
the loop with a perturbed parameter.  The oracle shares nothing with the
analytic chain except the forward simulation itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, PerturbationInvalid, ShapeMismatch
from .ofo import OfoConfig, run
from .plants import ConstraintSpec, MismatchSchedule, PlantModel
from .sensitivity import (GradientMismatch, InitialInput, MetricG,
                          ParameterTarget, StepSize)

ALL_STEPS = "all"

# Default probe steps per target, mirroring the validation sweeps.
DEFAULT_STEPS = {"alpha": 1e-4, "metric_g": 5e-2, "u0": 5e-3, "mismatch": 1e-5}


@dataclass(frozen=True)
class FdScheme:
    kind: str = "central"
    step: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("central", "forward"):
            raise DimensionMismatch(f"unknown scheme {self.kind!r}")
        if self.step <= 0.0:
            raise DimensionMismatch("step must be > 0")


@dataclass(frozen=True)
class FdProbe:
    """One numeric derivative plus the activity signature comparison."""

    values: np.ndarray
    active_sets_match: bool


def _active_signature(records) -> tuple:
    return tuple(r.active_set for r in records if r.w_star is not None)


def _schedule(cfg: OfoConfig) -> np.ndarray:
    if np.ndim(cfg.alpha) > 0:
        return np.array(cfg.alpha, dtype=float)
    return np.full(cfg.horizon, float(cfg.alpha))


def _beta_base(plant: PlantModel, cfg: OfoConfig,
               mismatch: MismatchSchedule | None) -> np.ndarray:
    if mismatch is not None:
        return np.array(mismatch.beta[: cfg.horizon], dtype=float)
    return np.zeros((cfg.horizon, plant.n_y, plant.n_u))


def _perturbed_run(plant, cfg, spec, target, component, at_step_s, eps,
                   mismatch) -> tuple[float, tuple]:
    """Phi at the probe step of a run with one parameter nudged by eps."""
    cfg_p = cfg
    mis_p = mismatch
    if isinstance(target, StepSize):
        sched = _schedule(cfg)
        if at_step_s == ALL_STEPS:
            sched = sched + eps
        else:
            sched = sched.copy()
            sched[at_step_s] += eps
        if np.any(sched <= 0.0):
            raise PerturbationInvalid("alpha - h <= 0; shrink h or use a forward scheme")
        cfg_p = OfoConfig(sched, cfg.metric_g, cfg.u0, cfg.horizon)
    elif isinstance(target, MetricG):
        i, j = target.entry_indices(cfg)[component]
        g = cfg.metric_g.copy()
        g[i, j] += eps
        if i != j:
            g[j, i] += eps
        try:
            cfg_p = OfoConfig(cfg.alpha, g, cfg.u0, cfg.horizon)
        except DimensionMismatch:
            raise PerturbationInvalid("perturbed metric is not positive definite") from None
    elif isinstance(target, InitialInput):
        u0 = cfg.u0.copy()
        u0[component] += eps
        if np.any(spec.a_mat @ u0 > spec.b_vec):
            raise PerturbationInvalid("perturbed u0 leaves the input polytope")
        cfg_p = OfoConfig(cfg.alpha, cfg.metric_g, u0, cfg.horizon)
    elif isinstance(target, GradientMismatch):
        well = target.well_indices(plant)[component]
        r, c = plant.mismatch_pattern[well]
        beta = _beta_base(plant, cfg, mismatch)
        if at_step_s == ALL_STEPS:
            beta[:, r, c] += eps
        else:
            beta[at_step_s, r, c] += eps
        mis_p = MismatchSchedule(beta)
    else:
        raise DimensionMismatch(f"unknown target {target!r}")
    records = run(plant, cfg_p, spec, mis_p)
    return records[-1].phi, _active_signature(records)


def fd_objective_sensitivity(plant: PlantModel, cfg: OfoConfig, spec: ConstraintSpec,
                             target: ParameterTarget, at_step_s=ALL_STEPS,
                             scheme: FdScheme = FdScheme(),
                             mismatch: MismatchSchedule | None = None) -> FdProbe:
    """Numeric d phi^{T_F} / d p by re-running the loop with p perturbed.

    `at_step_s` selects the timestep whose parameter copy is perturbed, or
    ALL_STEPS for a uniform perturbation (constant-parameter derivative).
    """
    if isinstance(target, InitialInput) and at_step_s != ALL_STEPS:
        raise DimensionMismatch("u0 is a single parameter block; use ALL_STEPS")
    if at_step_s != ALL_STEPS and not (0 <= at_step_s < cfg.horizon + 1):
        raise DimensionMismatch(f"step index {at_step_s} outside the horizon")
    if at_step_s != ALL_STEPS and at_step_s >= cfg.horizon:
        # cannot influence the run at all
        n_p = target.dim(plant, cfg)
        return FdProbe(np.zeros(n_p), True)
    n_p = target.dim(plant, cfg)
    values = np.zeros(n_p)
    consistent = True
    h = scheme.step
    for comp in range(n_p):
        if scheme.kind == "central":
            phi_plus, sig_plus = _perturbed_run(plant, cfg, spec, target, comp,
                                                at_step_s, +h, mismatch)
            phi_minus, sig_minus = _perturbed_run(plant, cfg, spec, target, comp,
                                                  at_step_s, -h, mismatch)
            values[comp] = (phi_plus - phi_minus) / (2.0 * h)
        else:
            phi_plus, sig_plus = _perturbed_run(plant, cfg, spec, target, comp,
                                                at_step_s, +h, mismatch)
            phi_0, sig_minus = _perturbed_run(plant, cfg, spec, target, comp,
                                              at_step_s, 0.0, mismatch)
            values[comp] = (phi_plus - phi_0) / h
        if sig_plus != sig_minus:
            consistent = False
    return FdProbe(values, consistent)


@dataclass(frozen=True)
class ComparisonReport:
    max_abs_err: float
    max_rel_err: float
    worst_index: tuple[int, ...] | None
    n_compared: int
    n_excluded: int
    passed: bool


def compare_reports(analytic, fd, abs_tol: float, rel_tol: float,
                    excluded=None) -> ComparisonReport:
    """Elementwise check |analytic - fd| <= max(abs_tol, rel_tol * |fd|).

    `excluded` marks entries the analytic side flagged (degenerate steps or
    active-set changes between the FD probe runs); those are skipped and
    counted separately.
    """
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(fd, dtype=float)
    if a.shape != f.shape:
        raise ShapeMismatch(f"analytic {a.shape} vs fd {f.shape}")
    if excluded is None:
        excluded = np.zeros(a.shape, dtype=bool)
    else:
        excluded = np.asarray(excluded, dtype=bool)
        if excluded.shape != a.shape:
            raise ShapeMismatch(f"excluded mask {excluded.shape} vs data {a.shape}")
    err = np.abs(a - f)
    tol = np.maximum(abs_tol, rel_tol * np.abs(f))
    ok = (err <= tol) | excluded
    n_excl = int(excluded.sum())
    compared = ~excluded
    if compared.any():
        rel = err / np.maximum(np.abs(f), 1e-300)
        masked_err = np.where(compared, err, -np.inf)
        worst_flat = int(np.argmax(masked_err))
        worst = np.unravel_index(worst_flat, a.shape)
        return ComparisonReport(
            max_abs_err=float(err[compared].max()),
            max_rel_err=float(rel[compared].max()),
            worst_index=tuple(int(i) for i in worst),
            n_compared=int(compared.sum()),
            n_excluded=n_excl,
            passed=bool(ok.all()),
        )
    return ComparisonReport(0.0, 0.0, None, 0, n_excl, True)
