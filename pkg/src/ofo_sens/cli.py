"""Command-line experiment runner.

Subcommands:
  run       closed-loop run + sensitivity totals (trajectory.csv,
            sensitivity_total.csv, optionally heatmap.csv)
  validate  analytic-vs-finite-difference comparison over a parameter grid
            (validation.csv; exit 4 on tolerance failure)
  heatmap   instantaneous mismatch sensitivity over all (k, s) pairs for one
            well (heatmap.csv)
  sweep     analytic sensitivity curves over the configured parameter grid
            (sweep.csv; parallelizable with --jobs)

All artifacts are written atomically (temp file + rename) with 17
significant digits so numeric fields survive parse/print round trips.
Runs are deterministic; the environment variable OFO_SENS_SEED is reserved
and currently unused.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, OfoSensError
from .fd_oracle import ALL_STEPS, DEFAULT_STEPS, FdScheme, fd_objective_sensitivity
from .ofo import OfoConfig, StepError
from .plants import GasLiftPlant, MismatchSchedule
from .sensitivity import (GradientMismatch, InitialInput, MetricG, StepSize,
                          run_with_sensitivity, target_label)

ABS_TOL = 1e-6
REL_TOL = 1e-3


def _fmt(v: float) -> str:
    return "%.17g" % v


def _write_csv(out_dir: str, name: str, header: list[str], rows) -> str:
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow(row)
        path = os.path.join(out_dir, name)
        os.replace(tmp, path)
        return path
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _targets_for(cfg: ExperimentConfig):
    targets = [StepSize(), MetricG(), InitialInput()]
    if cfg.plant.mismatch_pattern is not None:
        targets.append(GradientMismatch())
    return targets


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.out:
        cfg = ExperimentConfig(cfg.plant, cfg.spec, cfg.ofo, cfg.mismatch_per_well,
                               cfg.sweep, args.out, cfg.record_instantaneous)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    record = cfg.record_instantaneous or args.record == "instantaneous"
    targets = _targets_for(cfg)
    records, reports = run_with_sensitivity(cfg.plant, cfg.ofo, cfg.spec, targets,
                                            cfg.build_mismatch(), record_heatmap=record)
    n_u, n_y = cfg.plant.n_u, cfg.plant.n_y
    header = (["k"] + [f"u_{i+1}" for i in range(n_u)]
              + [f"y_{i+1}" for i in range(n_y)] + ["phi", "degenerate"])
    rows = [[r.k] + [_fmt(v) for v in r.u] + [_fmt(v) for v in r.y]
            + [_fmt(r.phi), int(r.degenerate)] for r in records]
    _write_csv(cfg.out_dir, "trajectory.csv", header, rows)

    tot_rows = []
    for rep in reports:
        label = target_label(rep.target)
        for k in range(rep.per_step_totals.shape[0]):
            for p in range(rep.per_step_totals.shape[1]):
                tot_rows.append([k, label, p, _fmt(rep.per_step_totals[k, p])])
    _write_csv(cfg.out_dir, "sensitivity_total.csv", ["k", "target", "param_index", "value"],
               tot_rows)

    if record:
        hm_rows = []
        for rep in reports:
            if not isinstance(rep.target, GradientMismatch):
                continue
            wells = rep.target.well_indices(cfg.plant)
            for k, block in enumerate(rep.heatmap):
                for s in range(block.shape[0]):
                    for p, well in enumerate(wells):
                        hm_rows.append([k, s, f"mismatch_well{well + 1}",
                                        _fmt(block[s, p])])
        _write_csv(cfg.out_dir, "heatmap.csv", ["k", "s", "target", "value"], hm_rows)

    final = records[-1]
    print(f"run complete: T_F={cfg.ofo.horizon} phi={_fmt(final.phi)}")
    if isinstance(cfg.plant, GasLiftPlant):
        print(f"total production (-phi): {_fmt(-final.phi)}")
    for rep in reports:
        if rep.degenerate_from is not None:
            print(f"warning: {target_label(rep.target)} sensitivities degenerate "
                  f"from step {rep.degenerate_from}", file=sys.stderr)
    return 0


_PARAM_TARGETS = {
    "alpha": StepSize,
    "g": MetricG,
    "u0": InitialInput,
    "mismatch": GradientMismatch,
}


def _variant(cfg: ExperimentConfig, param: str, value: float, horizon: int) -> OfoConfig:
    of = cfg.ofo
    if param == "alpha":
        return OfoConfig(float(value), of.metric_g, of.u0, horizon)
    if param == "g":
        return OfoConfig(of.alpha, np.array([[float(value)]]), of.u0, horizon)
    if param == "u0":
        return OfoConfig(of.alpha, of.metric_g, np.array([float(value)]), horizon)
    return OfoConfig(of.alpha, of.metric_g, of.u0, horizon)


# Grids matching the published validation sweeps (scalar plants only).
_DEFAULT_GRIDS = {
    "alpha": (1e-4, 0.025, 5e-4),
    "g": (0.5, 40.0, 0.5),
    "u0": (-4.0, 0.156, 0.05),
}


def _grid_for(cfg: ExperimentConfig, param: str) -> np.ndarray:
    if param == "mismatch" or cfg.plant.n_u != 1:
        return np.array([np.nan])  # single run at the config's own settings
    if cfg.sweep is not None and cfg.sweep.parameter == param:
        return cfg.sweep.grid()
    lo, hi, step = _DEFAULT_GRIDS[param]
    return np.arange(lo, hi + 0.5 * step, step)


def _horizons_for(cfg: ExperimentConfig) -> tuple[int, ...]:
    if cfg.sweep is not None:
        return cfg.sweep.horizons
    return (cfg.ofo.horizon,)


def cmd_validate(args) -> int:
    cfg = _load(args)
    param = args.param
    target_cls = _PARAM_TARGETS[param]
    target = target_cls()
    if param == "mismatch" and cfg.plant.mismatch_pattern is None:
        raise ConfigError("plant has no mismatch pattern; --param mismatch not applicable")
    h = args.h if args.h is not None else DEFAULT_STEPS[
        {"alpha": "alpha", "g": "metric_g", "u0": "u0", "mismatch": "mismatch"}[param]]
    scheme = FdScheme(args.scheme, h)
    grid = _grid_for(cfg, param)
    rows = []
    n_fail = n_excl = n_ok = 0
    worst_abs = 0.0
    worst_rel = 0.0  # over entries where fd is meaningfully nonzero
    for horizon in _horizons_for(cfg):
        for gi, value in enumerate(grid):
            if np.isnan(value):
                ofo = OfoConfig(cfg.ofo.alpha, cfg.ofo.metric_g, cfg.ofo.u0, horizon)
            else:
                ofo = _variant(cfg, param, value, horizon)
            mismatch = None
            if cfg.mismatch_per_well is not None:
                mismatch = MismatchSchedule.constant(
                    cfg.plant, np.array(cfg.mismatch_per_well), horizon)
            _, reports = run_with_sensitivity(cfg.plant, ofo, cfg.spec, [target], mismatch)
            rep = reports[0]
            point_scheme = scheme
            if param == "alpha" and scheme.kind == "central" and not np.isnan(value):
                # keep alpha - h positive at the small end of the grid
                point_scheme = FdScheme(scheme.kind, min(scheme.step, 0.5 * float(value)))
            probe = fd_objective_sensitivity(cfg.plant, ofo, cfg.spec, target, ALL_STEPS,
                                             point_scheme, mismatch)
            for p in range(rep.total.shape[0]):
                an, fd = rep.total[p], probe.values[p]
                abs_err = abs(an - fd)
                rel_err = abs_err / max(abs(fd), 1e-300)
                reason = ""
                if not probe.active_sets_match:
                    reason = "activeset_changed"
                elif rep.degenerate_from is not None:
                    reason = "degenerate"
                if reason:
                    n_excl += 1
                else:
                    if abs_err <= max(ABS_TOL, REL_TOL * abs(fd)):
                        n_ok += 1
                    else:
                        n_fail += 1
                    worst_abs = max(worst_abs, abs_err)
                    if abs(fd) > ABS_TOL:
                        worst_rel = max(worst_rel, rel_err)
                rows.append([target_label(target), p, gi, _fmt(an), _fmt(fd),
                             _fmt(abs_err), _fmt(rel_err), reason])
    _write_csv(cfg.out_dir, "validation.csv",
               ["target", "param_index", "s", "analytic", "fd",
                "abs_err", "rel_err", "excluded_reason"], rows)
    total = n_ok + n_fail + n_excl
    status = "PASS" if n_fail == 0 else "FAIL"
    print(f"validate {param}: {status} ({n_ok}/{total} ok, {n_fail} failed, "
          f"{n_excl} excluded; worst rel err {worst_rel:.3e}, abs err {worst_abs:.3e})")
    return 0 if n_fail == 0 else 4


def cmd_heatmap(args) -> int:
    cfg = _load(args)
    if cfg.plant.mismatch_pattern is None:
        raise ConfigError("heatmap requires a plant with a mismatch pattern")
    if not (cfg.record_instantaneous or args.record == "instantaneous"):
        raise ConfigError("instantaneous recording disabled; enable it in [outputs] "
                          "or pass --record instantaneous")
    n_wells = len(cfg.plant.mismatch_pattern)
    if not (1 <= args.well <= n_wells):
        raise ConfigError(f"--well must be in 1..{n_wells}")
    well = args.well - 1
    target = GradientMismatch(wells=(well,))
    _, reports = run_with_sensitivity(cfg.plant, cfg.ofo, cfg.spec, [target],
                                      cfg.build_mismatch(), record_heatmap=True)
    rep = reports[0]
    label = f"mismatch_well{args.well}"
    rows = []
    grid = {}
    for k, block in enumerate(rep.heatmap):
        for s in range(block.shape[0]):
            grid[(k, s)] = block[s, 0]
            rows.append([k, s, label, _fmt(block[s, 0])])
    _write_csv(cfg.out_dir, "heatmap.csv", ["k", "s", "target", "value"], rows)
    for name, (k, s) in (("Q1", (1, 0)), ("Q2", (240, 100)), ("Q3", (500, 300))):
        if (k, s) in grid:
            print(f"{name}: dPhi^{k}/dbeta_s (s={s}) = {_fmt(grid[(k, s)])}")
    if rep.degenerate_from is not None:
        print(f"warning: degenerate from step {rep.degenerate_from}", file=sys.stderr)
    return 0


def _sweep_point(task):
    cfg, param, value, horizon = task
    target = _PARAM_TARGETS[param]()
    ofo = _variant(cfg, param, value, horizon)
    records, reports = run_with_sensitivity(cfg.plant, ofo, cfg.spec, [target],
                                            cfg.build_mismatch())
    return records[-1].phi, float(reports[0].total[0])


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if cfg.sweep is None:
        raise ConfigError("config has no [sweep] section")
    param = cfg.sweep.parameter
    if cfg.plant.n_u != 1:
        raise ConfigError("parameter sweeps are defined for scalar-input plants")
    grid = cfg.sweep.grid()
    tasks = [(cfg, param, float(v), h) for h in cfg.sweep.horizons for v in grid]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = [[param, _fmt(t[2]), t[3], _fmt(phi), _fmt(sens)]
            for t, (phi, sens) in zip(tasks, results)]
    _write_csv(cfg.out_dir, "sweep.csv",
               ["parameter", "value", "horizon", "phi", "sensitivity"], rows)
    print(f"sweep {param}: {len(rows)} points over horizons {list(cfg.sweep.horizons)}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ofo-sens",
                                description="Closed-loop optimization runs with "
                                            "closed-form parameter sensitivities.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out", default=None, help="output directory override")

    sp = sub.add_parser("run", help="run the loop and write sensitivity artifacts")
    common(sp)
    sp.add_argument("--record", choices=["instantaneous"], default=None)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="compare analytic sensitivities to FD")
    common(sp)
    sp.add_argument("--param", required=True, choices=sorted(_PARAM_TARGETS))
    sp.add_argument("--scheme", choices=["central", "forward"], default="central")
    sp.add_argument("--h", type=float, default=None, help="FD step")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("heatmap", help="instantaneous mismatch sensitivity grid")
    common(sp)
    sp.add_argument("--well", type=int, required=True, help="well number (1-based)")
    sp.add_argument("--record", choices=["instantaneous"], default=None)
    sp.set_defaults(func=cmd_heatmap)

    sp = sub.add_parser("sweep", help="analytic sensitivity curves over the sweep grid")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StepError as exc:
        print(f"numerical failure at timestep {exc.k}: {exc.cause}", file=sys.stderr)
        return 3
    except OfoSensError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
