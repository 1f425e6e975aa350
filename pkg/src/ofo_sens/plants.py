"""Plant models: steady-state maps, costs, derivatives, constraint data.

Two concrete plants are shipped: a one-dimensional polynomial toy plant
and a five-well gas-lift allocation plant with two platforms.  Both expose
analytic first and second derivatives of the map h and the cost, which the
sensitivity chain consumes directly (no finite differences inside the
analytic path).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch, SparsityViolation


class PlantModel:
    """Interface: steady-state map h, cost phi, and their derivatives.

    Gradients of scalar functions are row vectors (1 x n); grad_h is the
    (n_y x n_u) Jacobian and hess_h the (n_y x n_u x n_u) stack of input
    Hessians per output.
    """

    n_u: int
    n_y: int
    # (row, column) of grad_h touched by the mismatch parameter of each well,
    # or None when the plant has no mismatch pattern.
    mismatch_pattern: tuple[tuple[int, int], ...] | None = None
    # Groups of input indices used for worst-case mismatch aggregation.
    input_groups: tuple[tuple[int, ...], ...] | None = None

    def h(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_h(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_h(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def phi(self, u: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad_phi_u(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_phi_y(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_phi_uu(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_phi_uy(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_phi_yy(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def composed_gradient(self, u: np.ndarray) -> np.ndarray:
        """d phi(u, h(u)) / du as a (1 x n_u) row."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        y = self.h(u)
        return self.grad_phi_u(u, y) + self.grad_phi_y(u, y) @ self.grad_h(u)


class ToyPlant(PlantModel):
    """Scalar plant y = u^2 + 4u with cost 0.1(u^2 y - 4uy + 5u) + 5."""

    n_u = 1
    n_y = 1

    def h(self, u):
        u = float(np.asarray(u).reshape(()))
        return np.array([u * u + 4.0 * u])

    def grad_h(self, u):
        u = float(np.asarray(u).reshape(()))
        return np.array([[2.0 * u + 4.0]])

    def hess_h(self, u):
        return np.array([[[2.0]]])

    def phi(self, u, y):
        u = float(np.asarray(u).reshape(()))
        y = float(np.asarray(y).reshape(()))
        return 0.1 * (u * u * y - 4.0 * u * y + 5.0 * u) + 5.0

    def grad_phi_u(self, u, y):
        u = float(np.asarray(u).reshape(()))
        y = float(np.asarray(y).reshape(()))
        return np.array([[0.1 * (2.0 * u * y - 4.0 * y + 5.0)]])

    def grad_phi_y(self, u, y):
        u = float(np.asarray(u).reshape(()))
        return np.array([[0.1 * (u * u - 4.0 * u)]])

    def hess_phi_uu(self, u, y):
        y = float(np.asarray(y).reshape(()))
        return np.array([[0.2 * y]])

    def hess_phi_uy(self, u, y):
        u = float(np.asarray(u).reshape(()))
        return np.array([[0.1 * (2.0 * u - 4.0)]])

    def hess_phi_yy(self, u, y):
        return np.array([[0.0]])


def toy_eval(u: float) -> dict:
    """Evaluate the toy plant and its first derivatives at a scalar input."""
    plant = ToyPlant()
    u_vec = np.array([float(u)])
    y = plant.h(u_vec)
    return {
        "y": float(y[0]),
        "phi": plant.phi(u_vec, y),
        "grad_h": float(plant.grad_h(u_vec)[0, 0]),
        "grad_phi_u": float(plant.grad_phi_u(u_vec, y)[0, 0]),
        "grad_phi_y": float(plant.grad_phi_y(u_vec, y)[0, 0]),
    }


class GasLiftPlant(PlantModel):
    """Five wells feeding two platforms; each well is a quartic in its own input.

    Well i produces f_i(u_i) = s0 + s1 u + s2 u^2 + s3 u^3 + s4 u^4.  The
    platform outputs are y1 = f1 + f2 and y2 = f3 + f4 + f5, and the cost is
    -y1 - y2 so the generic machinery always minimizes.
    """

    n_u = 5
    n_y = 2

    def __init__(self, coeffs: np.ndarray, platform_of_well=(1, 1, 2, 2, 2)):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (5, 5):
            raise DimensionMismatch(f"coeffs must be 5x5 (s0..s4 per well), got {coeffs.shape}")
        plat = tuple(int(p) for p in platform_of_well)
        if len(plat) != 5 or any(p not in (1, 2) for p in plat):
            raise ConfigError(f"platform_of_well must map 5 wells to platforms 1/2, got {plat}")
        self.coeffs = coeffs
        self.platform_of_well = plat
        self.mismatch_pattern = tuple((p - 1, i) for i, p in enumerate(plat))
        groups: dict[int, list[int]] = {1: [], 2: []}
        for i, p in enumerate(plat):
            groups[p].append(i)
        self.input_groups = tuple(tuple(g) for g in groups.values() if g)

    def _f(self, u):
        powers = np.vander(u, 5, increasing=True)  # (5 wells, u^0..u^4)
        return np.sum(self.coeffs * powers, axis=1)

    def _df(self, u):
        d = self.coeffs[:, 1:] * np.array([1.0, 2.0, 3.0, 4.0])
        powers = np.vander(u, 4, increasing=True)
        return np.sum(d * powers, axis=1)

    def _d2f(self, u):
        d2 = self.coeffs[:, 2:] * np.array([2.0, 6.0, 12.0])
        powers = np.vander(u, 3, increasing=True)
        return np.sum(d2 * powers, axis=1)

    def _rows(self):
        return np.array([p - 1 for p in self.platform_of_well])

    def h(self, u):
        u = np.asarray(u, dtype=float).reshape(5)
        f = self._f(u)
        rows = self._rows()
        return np.array([f[rows == 0].sum(), f[rows == 1].sum()])

    def grad_h(self, u):
        u = np.asarray(u, dtype=float).reshape(5)
        df = self._df(u)
        out = np.zeros((2, 5))
        out[self._rows(), np.arange(5)] = df
        return out

    def hess_h(self, u):
        u = np.asarray(u, dtype=float).reshape(5)
        d2f = self._d2f(u)
        out = np.zeros((2, 5, 5))
        rows = self._rows()
        for i in range(5):
            out[rows[i], i, i] = d2f[i]
        return out

    def phi(self, u, y):
        y = np.asarray(y, dtype=float).reshape(2)
        return float(-y[0] - y[1])

    def grad_phi_u(self, u, y):
        return np.zeros((1, 5))

    def grad_phi_y(self, u, y):
        return np.array([[-1.0, -1.0]])

    def hess_phi_uu(self, u, y):
        return np.zeros((5, 5))

    def hess_phi_uy(self, u, y):
        return np.zeros((5, 2))

    def hess_phi_yy(self, u, y):
        return np.zeros((2, 2))


def gaslift_eval(u: np.ndarray, coeffs: np.ndarray) -> dict:
    """Evaluate a gas-lift plant with the given well coefficients at u."""
    plant = GasLiftPlant(coeffs)
    u = np.asarray(u, dtype=float).reshape(5)
    y = plant.h(u)
    return {
        "y": y,
        "phi": plant.phi(u, y),
        "grad_h": plant.grad_h(u),
        "hess_h": plant.hess_h(u),
    }


def apply_mismatch(grad_h_true: np.ndarray, beta_k: np.ndarray,
                   pattern: tuple[tuple[int, int], ...]) -> np.ndarray:
    """Additive gradient mismatch, restricted to the plant's sparsity pattern."""
    grad_h_true = np.asarray(grad_h_true, dtype=float)
    beta_k = np.asarray(beta_k, dtype=float)
    if beta_k.shape != grad_h_true.shape:
        raise DimensionMismatch(f"beta {beta_k.shape} vs grad_h {grad_h_true.shape}")
    allowed = np.zeros(beta_k.shape, dtype=bool)
    for r, c in pattern:
        allowed[r, c] = True
    if np.any(beta_k[~allowed] != 0.0):
        raise SparsityViolation("beta has nonzero entries outside the mismatch pattern")
    return grad_h_true + beta_k


@dataclass(frozen=True)
class MismatchSchedule:
    """Time-indexed additive gradient perturbations, one matrix per step."""

    beta: np.ndarray  # (horizon, n_y, n_u)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 3:
            raise DimensionMismatch(f"beta must be (horizon, n_y, n_u), got {beta.shape}")
        object.__setattr__(self, "beta", beta)

    @property
    def horizon(self) -> int:
        return self.beta.shape[0]

    def at(self, k: int) -> np.ndarray:
        return self.beta[k]

    @staticmethod
    def constant(plant: PlantModel, per_well: np.ndarray, horizon: int) -> "MismatchSchedule":
        """Same per-well mismatch applied at every timestep."""
        if plant.mismatch_pattern is None:
            raise ConfigError("plant has no mismatch pattern")
        per_well = np.asarray(per_well, dtype=float).reshape(len(plant.mismatch_pattern))
        one = np.zeros((plant.n_y, plant.n_u))
        for (r, c), v in zip(plant.mismatch_pattern, per_well):
            one[r, c] = v
        return MismatchSchedule(np.repeat(one[None, :, :], horizon, axis=0))

    def validate(self, plant: PlantModel) -> None:
        if plant.mismatch_pattern is None:
            raise ConfigError("plant has no mismatch pattern")
        for k in range(self.horizon):
            apply_mismatch(np.zeros((plant.n_y, plant.n_u)), self.beta[k], plant.mismatch_pattern)


@dataclass(frozen=True)
class ConstraintSpec:
    """Input polytope A u <= b and output polytope C y <= d."""

    a_mat: np.ndarray
    b_vec: np.ndarray
    c_mat: np.ndarray
    d_vec: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        b = np.atleast_1d(np.asarray(self.b_vec, dtype=float))
        c = np.atleast_2d(np.asarray(self.c_mat, dtype=float))
        d = np.atleast_1d(np.asarray(self.d_vec, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"A has {a.shape[0]} rows, b has {b.shape[0]}")
        if c.shape[0] != d.shape[0]:
            raise DimensionMismatch(f"C has {c.shape[0]} rows, d has {d.shape[0]}")
        object.__setattr__(self, "a_mat", a)
        object.__setattr__(self, "b_vec", b)
        object.__setattr__(self, "c_mat", c)
        object.__setattr__(self, "d_vec", d)

    @property
    def n_c1(self) -> int:
        return self.a_mat.shape[0]

    @property
    def n_c2(self) -> int:
        return self.c_mat.shape[0]

    def check_strictly_feasible(self, plant: PlantModel, u0: np.ndarray) -> None:
        """The initial input must sit strictly inside the input polytope."""
        u0 = np.atleast_1d(np.asarray(u0, dtype=float))
        if np.any(self.a_mat @ u0 >= self.b_vec):
            raise ConfigError("u0 is not strictly feasible for A u < b")
        y0 = plant.h(u0)
        if np.any(self.c_mat @ y0 >= self.d_vec):
            raise ConfigError("h(u0) is not strictly feasible for C y < d")


def toy_constraints(input_bound: float = 5.0) -> ConstraintSpec:
    """Box constraints |u| <= input_bound, |y| <= 5 for the toy plant."""
    return ConstraintSpec(
        a_mat=np.array([[1.0], [-1.0]]),
        b_vec=np.array([input_bound, input_bound]),
        c_mat=np.array([[1.0], [-1.0]]),
        d_vec=np.array([5.0, 5.0]),
    )


# Per-well input bounds [lower, upper] for the gas-lift study, Sm^3/day.
GASLIFT_INPUT_BOUNDS = np.array(
    [
        [1157.0, 9576.0],
        [6819.0, 11745.0],
        [2714.0, 5972.0],
        [2399.0, 7377.0],
        [4125.0, 9043.0],
    ]
)

GASLIFT_U0 = np.array([2500.0, 7000.0, 4500.0, 4500.0, 4500.0])


def gaslift_constraints(coupling: bool = False) -> ConstraintSpec:
    """Per-well input bounds and platform output bounds.

    With `coupling`, the total gas budget (sum u_i <= 26000) is added and
    the first platform's capacity tightens to 130.
    """
    rows = []
    rhs = []
    for i in range(5):
        lo, hi = GASLIFT_INPUT_BOUNDS[i]
        e = np.zeros(5)
        e[i] = 1.0
        rows += [e, -e]
        rhs += [hi, -lo]
    if coupling:
        rows.append(np.ones(5))
        rhs.append(26000.0)
    c = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    d = np.array([130.0 if coupling else 150.0, 0.0, 150.0, 0.0])
    return ConstraintSpec(np.array(rows), np.array(rhs), c, d)


def _quartic_well(peak_u: float, peak_f: float, c2: float, c4: float = 0.0) -> np.ndarray:
    """Coefficients s0..s4 of f(u) = peak_f - c2 (u - peak_u)^2 + c4 (u - peak_u)^4."""
    a = peak_u
    return np.array(
        [
            peak_f - c2 * a**2 + c4 * a**4,
            2.0 * c2 * a - 4.0 * c4 * a**3,
            -c2 + 6.0 * c4 * a**2,
            -4.0 * c4 * a,
            c4,
        ]
    )


def default_gaslift_coeffs() -> np.ndarray:
    """Default well characteristics (the published curves are not available).

    Constructed so that, with the default controller settings, well 2 hovers
    around its peak with an aggressive effective step (high early mismatch
    sensitivity), well 3 settles at its optimum, and wells 1, 4 and 5 are
    still ascending at the end of the horizon.  All curves are nonnegative
    on their input boxes and peak in the interior.
    """
    return np.vstack(
        [
            _quartic_well(5400.0, 60.0, 3.0e-6),
            _quartic_well(7000.04, 68.0, 5.0e-6, 1.0e-13),
            _quartic_well(4900.0, 40.0, 8.0e-6),
            _quartic_well(4600.0, 45.0, 5.0e-6),
            _quartic_well(4520.0, 55.0, 2.5e-6),
        ]
    )


# Mismatch used for the constant-gradient study: per-well offsets applied at
# every timestep.
GASLIFT_DELTA_BETA = np.array([0.0, -0.04, -0.005, -0.001, -0.007])
