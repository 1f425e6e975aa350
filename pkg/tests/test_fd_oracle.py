"""Oracle self-tests: convergence order, edge cases, comparison report."""

import numpy as np
import pytest

from ofo_sens.errors import PerturbationInvalid, ShapeMismatch
from ofo_sens.fd_oracle import (ALL_STEPS, FdScheme, compare_reports,
                                fd_objective_sensitivity)
from ofo_sens.ofo import OfoConfig
from ofo_sens.plants import ToyPlant, toy_constraints
from ofo_sens.sensitivity import InitialInput, MetricG, StepSize


def toy_cfg(alpha=0.01, u0=-0.63, horizon=50, g=1.0):
    return OfoConfig(alpha, np.array([[g]]), np.array([u0]), horizon)


class TestScheme:
    def test_rejects_bad_kind_or_step(self):
        with pytest.raises(Exception):
            FdScheme(kind="backward")
        with pytest.raises(Exception):
            FdScheme(step=0.0)

    def test_central_self_consistency_over_steps(self):
        # the central estimate should stabilize as h shrinks
        plant, spec = ToyPlant(), toy_constraints()
        cfg = toy_cfg(horizon=40)
        vals = [fd_objective_sensitivity(plant, cfg, spec, StepSize(),
                                         scheme=FdScheme("central", h)).values[0]
                for h in (1e-4, 1e-5, 1e-6)]
        spread = max(vals) - min(vals)
        assert spread < 1e-3 * abs(vals[-1])
        # truncation shrinks with h: the coarse probe is the outlier
        assert abs(vals[0] - vals[2]) >= abs(vals[1] - vals[2])

    def test_forward_matches_central(self):
        plant, spec = ToyPlant(), toy_constraints()
        cfg = toy_cfg(horizon=40)
        c = fd_objective_sensitivity(plant, cfg, spec, StepSize(),
                                     scheme=FdScheme("central", 1e-6)).values[0]
        f = fd_objective_sensitivity(plant, cfg, spec, StepSize(),
                                     scheme=FdScheme("forward", 1e-8)).values[0]
        assert f == pytest.approx(c, rel=1e-5)

    def test_metric_richardson_consistency(self):
        # coarse and fine probes of d phi / dG agree to the coarse truncation
        plant, spec = ToyPlant(), toy_constraints()
        cfg = OfoConfig(0.01, np.array([[10.0]]), np.array([-0.63]), 100)
        coarse = fd_objective_sensitivity(plant, cfg, spec, MetricG(),
                                          scheme=FdScheme("central", 5e-2)).values[0]
        fine = fd_objective_sensitivity(plant, cfg, spec, MetricG(),
                                        scheme=FdScheme("central", 1e-4)).values[0]
        assert coarse == pytest.approx(fine, rel=1e-3, abs=1e-8)


class TestEdgeCases:
    def test_step_at_or_past_horizon_is_zero(self):
        plant, spec = ToyPlant(), toy_constraints()
        cfg = toy_cfg(horizon=10)
        probe = fd_objective_sensitivity(plant, cfg, spec, StepSize(), at_step_s=10)
        assert np.all(np.abs(probe.values) <= 1e-12)
        assert probe.active_sets_match

    def test_u0_requires_all_steps(self):
        plant, spec = ToyPlant(), toy_constraints()
        with pytest.raises(Exception):
            fd_objective_sensitivity(plant, toy_cfg(horizon=5), spec,
                                     InitialInput(), at_step_s=2)

    def test_alpha_perturbation_must_stay_positive(self):
        plant, spec = ToyPlant(), toy_constraints()
        cfg = toy_cfg(alpha=1e-7, horizon=5)
        with pytest.raises(PerturbationInvalid):
            fd_objective_sensitivity(plant, cfg, spec, StepSize(),
                                     scheme=FdScheme("central", 1e-6))

    def test_u0_perturbation_must_stay_feasible(self):
        plant, spec = ToyPlant(), toy_constraints()
        cfg = toy_cfg(u0=-4.999999, horizon=5)
        with pytest.raises(PerturbationInvalid):
            fd_objective_sensitivity(plant, cfg, spec, InitialInput(),
                                     scheme=FdScheme("central", 1e-3))

    def test_single_step_perturbation_smaller_than_uniform(self):
        plant, spec = ToyPlant(), toy_constraints()
        cfg = toy_cfg(horizon=20)
        uniform = fd_objective_sensitivity(plant, cfg, spec, StepSize(),
                                           at_step_s=ALL_STEPS,
                                           scheme=FdScheme("central", 1e-6)).values[0]
        single = fd_objective_sensitivity(plant, cfg, spec, StepSize(),
                                          at_step_s=5,
                                          scheme=FdScheme("central", 1e-6)).values[0]
        assert abs(single) < abs(uniform)


class TestCompareReports:
    def test_identical_passes(self):
        rep = compare_reports(np.ones(4), np.ones(4), 1e-9, 1e-9)
        assert rep.passed and rep.max_abs_err == 0.0 and rep.n_compared == 4

    def test_within_relative_band(self):
        rep = compare_reports(np.array([1.0]), np.array([1.0005]), 1e-9, 1e-3)
        assert rep.passed

    def test_outside_band_fails(self):
        rep = compare_reports(np.array([0.0]), np.array([0.1]), 1e-6, 1e-3)
        assert not rep.passed
        assert rep.worst_index == (0,)
        assert rep.max_abs_err == pytest.approx(0.1)

    def test_excluded_entries_skipped(self):
        a = np.array([1.0, 50.0])
        f = np.array([1.0, 0.0])
        rep = compare_reports(a, f, 1e-9, 1e-3, excluded=np.array([False, True]))
        assert rep.passed and rep.n_compared == 1 and rep.n_excluded == 1

    def test_all_excluded(self):
        rep = compare_reports(np.ones(3), np.zeros(3), 1e-9, 1e-9,
                              excluded=np.ones(3, dtype=bool))
        assert rep.passed and rep.n_compared == 0 and rep.worst_index is None

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            compare_reports(np.ones(3), np.ones(4), 1e-9, 1e-9)
        with pytest.raises(ShapeMismatch):
            compare_reports(np.ones(3), np.ones(3), 1e-9, 1e-9,
                            excluded=np.zeros(2, dtype=bool))
