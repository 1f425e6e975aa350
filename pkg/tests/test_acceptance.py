"""Acceptance suite: eight end-to-end criteria, one printed line each.

Each test prints `criterion N: PASS/FAIL ...` (bypassing capture) so the
suite output doubles as the acceptance report.
"""

import os
import time

import numpy as np
import pytest

from ofo_sens.cli import main as cli_main
from ofo_sens.config import (default_gaslift_experiment, default_toy_experiment,
                             serialize_config)
from ofo_sens.fd_oracle import ALL_STEPS, FdScheme, fd_objective_sensitivity
from ofo_sens.ofo import OfoConfig, run
from ofo_sens.plants import (GASLIFT_DELTA_BETA, MismatchSchedule, ToyPlant,
                             toy_constraints)
from ofo_sens.qp_core import check_nondegenerate, solve_qp
from ofo_sens.qp_diff import differentiate_qp
from ofo_sens.sensitivity import (GradientMismatch, InitialInput, MetricG,
                                  StepSize, first_order_estimate,
                                  max_abs_total_sensitivity, run_with_sensitivity)

from test_qp_core import brute_force, random_qp
from test_qp_diff import fd_jacobians


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


def test_criterion_1_qp_oracle_equivalence(capsys):
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    checked, worst = 0, 0.0
    while checked < 200:
        qp = random_qp(rng)
        ref = brute_force(qp)
        if ref is None:
            continue
        sol = solve_qp(qp)
        worst = max(worst, float(np.max(np.abs(sol.w_star - ref))))
        checked += 1
    dt = time.monotonic() - t0
    ok = worst < 1e-8 and dt < 10.0
    report(capsys, 1, ok, f"200 QPs vs enumeration, worst err {worst:.2e}, {dt:.1f}s")


def test_criterion_2_kkt_differentiation_vs_fd(capsys):
    t0 = time.monotonic()
    rng = np.random.default_rng(17)
    checked, n_bad = 0, 0
    while checked < 200:
        qp = random_qp(rng)
        sol = solve_qp(qp)
        if not check_nondegenerate(qp, sol, tol=1e-6).ok:
            continue
        qd = differentiate_qp(qp, sol)
        db, dA, dc, dG_pair = fd_jacobians(qp, h=1e-6)

        def bad(a, f):
            return np.any(np.abs(a - f) > np.maximum(1e-5, 1e-3 * np.abs(a)))

        n = qp.n_u
        pair = np.zeros_like(dG_pair)
        for i in range(n):
            for j in range(n):
                pair[:, i * n + j] = qd.dw_dG[:, i * n + j] + qd.dw_dG[:, j * n + i]
        if bad(qd.dw_db, db) or bad(qd.dw_dA, dA) or bad(qd.dw_dc, dc) or bad(pair, dG_pair):
            n_bad += 1
        checked += 1
    dt = time.monotonic() - t0
    ok = n_bad == 0 and dt < 30.0
    report(capsys, 2, ok, f"200 QPs, {n_bad} outside tolerance, {dt:.1f}s")


def _toy_sweep_check(target, grid, make_cfg, h, plant, spec):
    """(n_fail, n_excluded, n_total, worst_rel) for one analytic-vs-FD sweep."""
    n_fail = n_excl = n_total = 0
    worst = 0.0
    for value in grid:
        cfg = make_cfg(float(value))
        _, reports = run_with_sensitivity(plant, cfg, spec, [target])
        rep = reports[0]
        probe = fd_objective_sensitivity(plant, cfg, spec, target, ALL_STEPS,
                                         FdScheme("central", h))
        n_total += 1
        if not probe.active_sets_match or rep.degenerate_from is not None:
            n_excl += 1
            continue
        an, fd = rep.total[0], probe.values[0]
        err = abs(an - fd)
        if err > max(1e-6, 1e-3 * abs(fd)):
            n_fail += 1
        if abs(fd) > 1e-6:
            worst = max(worst, err / abs(fd))
    return n_fail, n_excl, n_total, worst


def test_criterion_3_toy_sensitivity_vs_fd(capsys):
    t0 = time.monotonic()
    plant, spec = ToyPlant(), toy_constraints()
    alpha_grid = np.arange(1e-4, 0.025 + 2.5e-4, 5e-4)
    g_grid = np.arange(0.5, 40.0 + 0.25, 0.5)
    u0_grid = np.arange(-4.0, 0.156 + 0.025, 0.05)
    fails = excls = totals = 0
    worst = 0.0
    for horizon in (50, 100, 150):
        sweeps = [
            (StepSize(), alpha_grid,
             lambda v, T=horizon: OfoConfig(v, np.array([[1.0]]), np.array([-0.63]), T), 1e-5),
            (MetricG(), g_grid,
             lambda v, T=horizon: OfoConfig(0.01, np.array([[v]]), np.array([-0.63]), T), 1e-4),
            (InitialInput(), u0_grid,
             lambda v, T=horizon: OfoConfig(0.01, np.array([[1.0]]), np.array([v]), T), 1e-5),
        ]
        for target, grid, make_cfg, h in sweeps:
            f, e, n, w = _toy_sweep_check(target, grid, make_cfg, h, plant, spec)
            fails += f
            excls += e
            totals += n
            worst = max(worst, w)
    dt = time.monotonic() - t0
    ok = fails == 0 and excls < 0.05 * totals and dt < 300.0
    report(capsys, 3, ok, f"{totals} grid points, {fails} failed, {excls} excluded, "
                          f"worst rel err {worst:.2e}, {dt:.0f}s")


def test_criterion_4_constrained_zero_sensitivity(capsys):
    plant = ToyPlant()
    spec = toy_constraints(input_bound=2.0)
    targets = [StepSize(), MetricG(), InitialInput()]
    worst = 0.0
    n_sat = 0
    sweeps = [
        [OfoConfig(v, np.array([[1.0]]), np.array([-0.63]), 150)
         for v in np.arange(1e-4, 0.025, 5e-4)],
        [OfoConfig(0.01, np.array([[v]]), np.array([-0.63]), 150)
         for v in np.arange(0.5, 40.0, 0.5)],
        [OfoConfig(0.01, np.array([[1.0]]), np.array([v]), 150)
         for v in np.arange(-1.95, 0.156, 0.05)],
    ]
    for cfgs in sweeps:
        for cfg in cfgs:
            records, reports = run_with_sensitivity(plant, cfg, spec, targets)
            if abs(records[-1].u[0] + 2.0) > 1e-9:
                continue  # not on the saturated portion of the sweep
            n_sat += 1
            for rep in reports:
                worst = max(worst, float(np.max(np.abs(rep.total))))
    ok = n_sat > 0 and worst <= 1e-6
    report(capsys, 4, ok, f"{n_sat} saturated points, max |sensitivity| {worst:.2e}")


def test_criterion_5_convergence_nullity(capsys):
    plant, spec = ToyPlant(), toy_constraints()
    cfg = OfoConfig(0.02, np.array([[1.0]]), np.array([-0.63]), 300)
    records, reports = run_with_sensitivity(plant, cfg, spec,
                                            [StepSize(), MetricG(), InitialInput()])
    gnorm = float(np.linalg.norm(plant.composed_gradient(records[-1].u)))
    worst = max(float(np.max(np.abs(rep.instantaneous), initial=0.0)) for rep in reports)
    worst = max(worst, max(float(np.max(np.abs(rep.total))) for rep in reports))
    ok = gnorm < 1e-10 and worst < 1e-8
    report(capsys, 5, ok, f"|grad|={gnorm:.2e}, max row norm {worst:.2e}")


def test_criterion_6_gaslift_regression_suite(capsys):
    t0 = time.monotonic()
    details = []
    oks = []

    # clean default run with mismatch sensitivities and the well-2 heatmap
    cfg = default_gaslift_experiment(horizon=500)
    _, reports = run_with_sensitivity(cfg.plant, cfg.ofo, cfg.spec,
                                      [GradientMismatch()], record_heatmap=True)
    rep = reports[0]

    # (a) uniform-mismatch totals vs FD
    probe = fd_objective_sensitivity(cfg.plant, cfg.ofo, cfg.spec, GradientMismatch(),
                                     ALL_STEPS, FdScheme("central", 1e-7))
    err = np.abs(rep.total - probe.values)
    ok_a = bool(probe.active_sets_match
                and np.all(err <= np.maximum(1e-6, 1e-3 * np.abs(probe.values))))
    rel_a = float(np.max(err / np.maximum(np.abs(probe.values), 1e-6)))
    oks.append(ok_a)
    details.append(f"6a rel err {rel_a:.1e}")

    # (b) instantaneous sensitivity of the final objective to well-2 mismatch
    final_rows = rep.heatmap[500][:, 1]  # well index 1 (second column)
    early = float(np.max(np.abs(final_rows[:100])))
    late = float(np.max(np.abs(final_rows[400:500])))
    ok_b = late < early
    oks.append(ok_b)
    details.append(f"6b early {early:.1f} vs late {late:.1f}")

    # (c) jump in the totals series when the gas-budget row first activates
    ccfg = default_gaslift_experiment(coupling=True, horizon=500)
    crecords, creports = run_with_sensitivity(ccfg.plant, ccfg.ofo, ccfg.spec,
                                              [GradientMismatch()])
    budget_row = 10  # the coupling constraint follows the ten per-well bounds
    k_act = next((r.k for r in crecords
                  if r.w_star is not None and budget_row in r.active_set), None)
    ok_c = k_act is not None
    ratio_c = 0.0
    if ok_c:
        totals = creports[0].per_step_totals
        diffs = np.abs(np.diff(totals, axis=0))
        jump = diffs[k_act]
        med = np.median(diffs[k_act - 20:k_act], axis=0)
        ratio_c = float(np.max(jump / np.maximum(med, 1e-300)))
        ok_c = ratio_c > 10.0
    oks.append(ok_c)
    details.append(f"6c activation k={k_act}, jump ratio {ratio_c:.1f}")

    # (d) the first-order worst-case estimate bounds the simulated change
    phi0 = run(cfg.plant, cfg.ofo, cfg.spec)[-1].phi
    est = first_order_estimate(max_abs_total_sensitivity(rep), GASLIFT_DELTA_BETA)

    def actual(scale):
        sched = MismatchSchedule.constant(cfg.plant, scale * GASLIFT_DELTA_BETA, 500)
        return abs(run(cfg.plant, cfg.ofo, cfg.spec, mismatch=sched)[-1].phi - phi0)

    act_full, act_half = actual(1.0), actual(0.5)
    gap_full = abs(est) - act_full
    gap_half = abs(est) / 2.0 - act_half
    ok_d = abs(est) >= act_full and 0.0 <= gap_half < gap_full
    oks.append(ok_d)
    details.append(f"6d bound {abs(est):.2f} >= actual {act_full:.2f}, "
                   f"gap {gap_full:.2f} -> {gap_half:.2f}")

    dt = time.monotonic() - t0
    ok = all(oks) and dt < 180.0
    report(capsys, 6, ok, "; ".join(details) + f"; {dt:.0f}s")


def test_criterion_7_first_order_estimate_value(capsys):
    sens = np.array([507.0, 718.0, 153.0, 287.0, 556.0])
    db = np.array([0.0, -0.04, -0.005, -0.001, -0.007])
    est = first_order_estimate(sens, db)
    ok = abs(est - (-32.6)) <= 0.05
    report(capsys, 7, ok, f"estimate {est:.3f} vs -32.6 +/- 0.05")


def test_criterion_8_determinism(capsys, tmp_path):
    cfg = default_gaslift_experiment(horizon=120)
    path = tmp_path / "cfg.toml"
    path.write_text(serialize_config(cfg))
    outs = [str(tmp_path / d) for d in ("o1", "o2")]
    for out in outs:
        assert cli_main(["run", "--config", str(path), "--out", out]) == 0
    same = True
    for name in ("trajectory.csv", "sensitivity_total.csv"):
        b = [open(os.path.join(out, name), "rb").read() for out in outs]
        same = same and b[0] == b[1]
    report(capsys, 8, same, "two runs, bit-identical CSVs" if same else "CSVs differ")
