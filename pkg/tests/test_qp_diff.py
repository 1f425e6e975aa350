"""Minimizer-derivative tests: hand cases, finite differences, invariants."""

import numpy as np
import pytest

from ofo_sens.qp_core import ProjectionQp, check_nondegenerate, solve_qp
from ofo_sens.qp_diff import contract, differentiate_qp, projection_objective


def random_qp(rng, n=None, m=None):
    n = n or rng.integers(1, 4)
    m = m if m is not None else rng.integers(0, 9)
    q = rng.standard_normal((n, n))
    g = q @ q.T + n * np.eye(n)
    c = rng.standard_normal(n) * 3.0
    a = rng.standard_normal((m, n))
    w0 = rng.standard_normal(n)
    b = a @ w0 + rng.uniform(0.1, 2.0, size=m)
    return ProjectionQp(g, c, a, b)


def fd_jacobians(qp, h=1e-6):
    """Central differences of w* over every entry of b, A, c, G."""
    n, m = qp.n_u, qp.n_bar

    def resolve(g, c, a, b):
        return solve_qp(ProjectionQp(g, c, a, b)).w_star

    db = np.zeros((n, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        db[:, i] = (resolve(qp.g_bar, qp.c_bar, qp.a_bar, qp.b_bar + e)
                    - resolve(qp.g_bar, qp.c_bar, qp.a_bar, qp.b_bar - e)) / (2 * h)
    dA = np.zeros((n, m * n))
    for i in range(m):
        for j in range(n):
            e = np.zeros((m, n))
            e[i, j] = h
            dA[:, i * n + j] = (resolve(qp.g_bar, qp.c_bar, qp.a_bar + e, qp.b_bar)
                                - resolve(qp.g_bar, qp.c_bar, qp.a_bar - e, qp.b_bar)) / (2 * h)
    dc = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        dc[:, j] = (resolve(qp.g_bar, qp.c_bar + e, qp.a_bar, qp.b_bar)
                    - resolve(qp.g_bar, qp.c_bar - e, qp.a_bar, qp.b_bar)) / (2 * h)
    # G must stay symmetric: perturb (i, j)/(j, i) pairs, compare column sums
    dG_pair = np.zeros((n, n * n))
    for i in range(n):
        for j in range(n):
            e = np.zeros((n, n))
            e[i, j] += h
            e[j, i] += h
            dG_pair[:, i * n + j] = (resolve(qp.g_bar + e, qp.c_bar, qp.a_bar, qp.b_bar)
                                     - resolve(qp.g_bar - e, qp.c_bar, qp.a_bar, qp.b_bar)) / (2 * h)
    return db, dA, dc, dG_pair


class TestHandCases:
    def test_unconstrained_1d(self):
        # w* = -c/2 so dw/dc = -1/Gbar = -0.5, dw/dG = -w* per entry
        qp = ProjectionQp(np.array([[2.0]]), np.array([4.0]),
                          np.zeros((0, 1)), np.zeros(0))
        qd = differentiate_qp(qp, solve_qp(qp))
        assert qd.dw_dc[0, 0] == pytest.approx(-0.5, abs=1e-14)
        assert qd.dw_dG[0, 0] == pytest.approx(1.0, abs=1e-14)  # -Ginv * (-w) = w/2... w=-2
        assert not qd.degenerate

    def test_pinned_bound(self):
        # active -w <= 1 pins w = -1: the minimizer tracks b, ignores c
        qp = ProjectionQp(np.array([[2.0]]), np.array([4.0]),
                          np.array([[-1.0]]), np.array([1.0]))
        qd = differentiate_qp(qp, solve_qp(qp))
        assert qd.dw_db[0, 0] == pytest.approx(-1.0, abs=1e-14)
        assert qd.dw_dc[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_inactive_rows_zero_columns(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            qp = random_qp(rng)
            sol = solve_qp(qp)
            qd = differentiate_qp(qp, sol)
            for i in range(qp.n_bar):
                if i not in sol.active_set:
                    assert np.all(qd.dw_db[:, i] == 0.0)
                    assert np.all(qd.dw_dA[:, i * qp.n_u:(i + 1) * qp.n_u] == 0.0)

    def test_weakly_active_flagged(self):
        qp = ProjectionQp(np.array([[2.0]]), np.array([0.0]),
                          np.array([[1.0]]), np.array([0.0]))
        qd = differentiate_qp(qp, solve_qp(qp))
        assert qd.degenerate
        assert qd.weakly_active == (0,)
        # treated as inactive: b has no effect
        assert qd.dw_db[0, 0] == 0.0

    def test_scale_consistency(self):
        # doubling (Gbar, cbar) leaves w* fixed and halves dw/dc
        rng = np.random.default_rng(9)
        qp = random_qp(rng, n=2, m=4)
        s1 = solve_qp(qp)
        qp2 = ProjectionQp(2.0 * qp.g_bar, 2.0 * qp.c_bar, qp.a_bar, qp.b_bar)
        s2 = solve_qp(qp2)
        assert np.max(np.abs(s1.w_star - s2.w_star)) < 1e-10
        d1 = differentiate_qp(qp, s1)
        d2 = differentiate_qp(qp2, s2)
        assert np.allclose(d2.dw_dc, 0.5 * d1.dw_dc, atol=1e-10)


class TestAgainstFiniteDifferences:
    def test_random_nondegenerate(self):
        rng = np.random.default_rng(17)
        checked = 0
        while checked < 200:
            qp = random_qp(rng)
            sol = solve_qp(qp)
            if not check_nondegenerate(qp, sol, tol=1e-6).ok:
                continue
            qd = differentiate_qp(qp, sol)
            db, dA, dc, dG_pair = fd_jacobians(qp)

            def close(a, f):
                return np.all(np.abs(a - f) <= np.maximum(1e-5, 1e-3 * np.abs(a)))

            assert close(qd.dw_db, db)
            assert close(qd.dw_dA, dA)
            assert close(qd.dw_dc, dc)
            n = qp.n_u
            for i in range(n):
                for j in range(n):
                    pair = qd.dw_dG[:, i * n + j] + qd.dw_dG[:, j * n + i]
                    assert close(pair, dG_pair[:, i * n + j])
            checked += 1


class TestContract:
    def test_matches_manual_chain(self):
        rng = np.random.default_rng(21)
        qp = random_qp(rng, n=2, m=5)
        sol = solve_qp(qp)
        qd = differentiate_qp(qp, sol)
        n, m, p = qp.n_u, qp.n_bar, 3
        d_b = rng.standard_normal((m, p))
        d_A = rng.standard_normal((m, n, p))
        d_c = rng.standard_normal((n, p))
        d_G = rng.standard_normal((n, n, p))
        out = contract(qd, d_b, d_A, d_c, d_G)
        manual = np.zeros((n, p))
        for k in range(p):
            manual[:, k] = (qd.dw_db @ d_b[:, k] + qd.dw_dA @ d_A[:, :, k].ravel()
                            + qd.dw_dc @ d_c[:, k] + qd.dw_dG @ d_G[:, :, k].ravel())
        assert np.allclose(out, manual, atol=1e-13)


class TestProjectionObjective:
    def test_zero_step_gives_constant(self):
        qp = ProjectionQp(np.array([[2.0]]), np.array([4.0]),
                          np.zeros((0, 1)), np.zeros(0))
        assert projection_objective(qp, np.zeros(1), 7.5) == pytest.approx(7.5)

    def test_hand_value(self):
        qp = ProjectionQp(np.array([[2.0]]), np.array([4.0]),
                          np.zeros((0, 1)), np.zeros(0))
        # 0.5*2*4 + (-2)*4 + 2 = 4 - 8 + 2 = -2
        assert projection_objective(qp, np.array([-2.0]), 2.0) == pytest.approx(-2.0)

    def test_reconstructs_weighted_distance(self):
        # objective equals ||w + Ginv grad||^2_G up to the dropped constant
        rng = np.random.default_rng(31)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            q = rng.standard_normal((n, n))
            g = q @ q.T + n * np.eye(n)
            grad = rng.standard_normal(n)
            g_bar = 2.0 * g
            c_bar = 2.0 * grad
            target = -np.linalg.solve(g, grad)
            m_bar = float(grad @ np.linalg.solve(g, grad))
            qp = ProjectionQp(g_bar, c_bar, np.zeros((0, n)), np.zeros(0))
            w = rng.standard_normal(n)
            direct = float((w - target) @ g @ (w - target))
            assert projection_objective(qp, w, m_bar) == pytest.approx(direct, abs=1e-12)
