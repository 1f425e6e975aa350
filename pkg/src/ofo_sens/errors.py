"""Exception hierarchy shared across the package."""


class OfoSensError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(OfoSensError):
    """Inconsistent array shapes in problem data."""


class Infeasible(OfoSensError):
    """The projection QP has no feasible point."""


class NumericalFailure(OfoSensError):
    """A linear-algebra step failed (singular or ill-conditioned system)."""


class DegenerateKkt(OfoSensError):
    """The linearized KKT system is singular; the minimizer is not differentiable here."""


class SparsityViolation(OfoSensError):
    """A mismatch matrix has nonzero entries outside the allowed pattern."""


class MissingSecondDerivatives(OfoSensError):
    """The plant does not provide the second derivatives the sensitivity chain needs."""


class PerturbationInvalid(OfoSensError):
    """A finite-difference perturbation would leave the valid parameter domain."""


class ShapeMismatch(OfoSensError):
    """Analytic and finite-difference reports have different shapes."""


class ConfigError(OfoSensError):
    """Invalid or missing experiment configuration."""
