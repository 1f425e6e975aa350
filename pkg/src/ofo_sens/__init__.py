"""Closed-loop optimization with closed-form parameter sensitivities.

The package runs projected-gradient feedback optimization against a
steady-state plant model and differentiates the running objective with
respect to the controller's step size, projection metric, initial input
and per-timestep gradient mismatch, validating everything against a
finite-difference oracle.
"""

from .errors import (ConfigError, DegenerateKkt, DimensionMismatch, Infeasible,
                     MissingSecondDerivatives, NumericalFailure, OfoSensError,
                     PerturbationInvalid, ShapeMismatch, SparsityViolation)
from .qp_core import (NondegeneracyReport, ProjectionQp, QpSolution,
                      check_nondegenerate, solve_qp)
from .qp_diff import QpDerivatives, contract, differentiate_qp, projection_objective
from .plants import (ConstraintSpec, GASLIFT_DELTA_BETA, GASLIFT_INPUT_BOUNDS,
                     GASLIFT_U0, GasLiftPlant, MismatchSchedule, PlantModel,
                     ToyPlant, apply_mismatch, default_gaslift_coeffs,
                     gaslift_constraints, gaslift_eval, toy_constraints, toy_eval)
from .ofo import OfoConfig, TrajectoryRecord, assemble_projection, ofo_step, run
from .sensitivity import (GradientMismatch, InitialInput, MetricG,
                          SensitivityAccumulator, SensitivityReport, StepSize,
                          first_order_estimate, max_abs_total_sensitivity,
                          run_with_sensitivity, target_label)
from .fd_oracle import (ALL_STEPS, ComparisonReport, FdProbe, FdScheme,
                        compare_reports, fd_objective_sensitivity)
from .config import (ExperimentConfig, GASLIFT_METRIC_DIAG, SweepSpec,
                     configs_equal, default_gaslift_experiment,
                     default_toy_experiment, load_config, parse_config,
                     serialize_config)

__version__ = "0.1.0"
