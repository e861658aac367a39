from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from mobecr.asymptotics import (
    influence_by_cell,
    influence_point,
    j_matrix,
    k_matrix,
    sandwich,
    wald_influence2,
    wald_influence2_by_cell,
)
from mobecr.errors import SingularityError
from mobecr.estimation import CountData, dpd_gradient
from mobecr.model import BivariateObservation, InspectionGrid, Theta, cell_table

SCENARIOS = (Theta(4.5, 2.5, 3.5), Theta(6.3, 2.1, 4.2), Theta(2.0, 3.0, 4.0))

rates = st.floats(0.3, 10.0)
thetas = st.builds(Theta, rates, rates, rates)


@st.composite
def grids(draw):
    k = draw(st.integers(2, 4))
    gaps = draw(st.lists(st.floats(0.02, 0.3), min_size=k, max_size=k))
    return InspectionGrid(np.cumsum(gaps))


def solve_functional(freqs: np.ndarray, grid: InspectionGrid, beta: float, start: Theta) -> np.ndarray:
    """Root of the DPD estimating equations on the given cell frequencies."""
    data = CountData(freqs)
    sol = optimize.root(lambda th: dpd_gradient(Theta.from_array(th), grid, data, beta), start.as_array(),
                        method="hybr", options={"xtol": 1e-13})
    assert np.abs(sol.fun).max() < 1e-12
    return sol.x


def path_derivative(p, cell, grid, beta, start, eps) -> np.ndarray:
    """Symmetric difference quotient of the functional along ``(1 - t) p + t delta_cell`` at ``t = 0``."""
    delta = np.eye(p.size)[cell]
    up = solve_functional((1 - eps) * p + eps * delta, grid, beta, start)
    down = solve_functional((1 + eps) * p - eps * delta, grid, beta, start)
    return (up - down) / (2 * eps)


def expected_loglik(theta: np.ndarray, p0: np.ndarray, grid: InspectionGrid) -> float:
    return float(p0 @ np.log(cell_table(Theta.from_array(theta), grid).probs))


class TestJK:
    def test_beta0_is_fisher_information(self, theta1, sim_grid):
        t = cell_table(theta1, sim_grid)
        fisher = (t.grads / t.probs[:, None]).T @ t.grads
        np.testing.assert_allclose(j_matrix(theta1, sim_grid, 0.0), fisher, rtol=1e-13)

    @pytest.mark.parametrize("theta", SCENARIOS)
    def test_beta0_matches_numerical_hessian(self, theta, sim_grid):
        p0 = cell_table(theta, sim_grid).probs
        th, h = theta.as_array(), 1e-4
        hess = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                ea, eb = np.eye(3)[a] * h, np.eye(3)[b] * h
                hess[a, b] = (expected_loglik(th + ea + eb, p0, sim_grid) - expected_loglik(th + ea - eb, p0, sim_grid)
                              - expected_loglik(th - ea + eb, p0, sim_grid)
                              + expected_loglik(th - ea - eb, p0, sim_grid)) / (4 * h * h)
        np.testing.assert_allclose(j_matrix(theta, sim_grid, 0.0), -hess, rtol=1e-5)

    def test_single_interval_term_by_term(self, theta1):
        grid = InspectionGrid((0.3,))
        t = cell_table(theta1, grid)
        beta = 0.4
        J = np.zeros((3, 3))
        for l in range(4):
            for a in range(3):
                for b in range(3):
                    J[a, b] += t.probs[l] ** (beta - 1) * t.grads[l, a] * t.grads[l, b]
        np.testing.assert_allclose(j_matrix(theta1, grid, beta), J, rtol=1e-13)

    @settings(max_examples=50, deadline=None)
    @given(thetas, grids(), st.floats(0.0, 1.0))
    def test_k_matches_double_sum(self, theta, grid, beta):
        t = cell_table(theta, grid)
        p, g = t.probs, t.grads
        w = p ** (beta - 1)
        M = p.size
        K = np.zeros((3, 3))
        for a in range(3):
            for b in range(3):
                s = sum(w[l] ** 2 * p[l] * (1 - p[l]) * g[l, a] * g[l, b] for l in range(M))
                s -= sum(w[l1] * w[l2] * p[l1] * p[l2] * (g[l1, a] * g[l2, b] + g[l2, a] * g[l1, b])
                         for l1 in range(M) for l2 in range(l1 + 1, M))
                K[a, b] = s
        scale = np.abs(K).max()
        np.testing.assert_allclose(k_matrix(theta, grid, beta), K, atol=1e-11 * scale)

    def test_k_equals_j_at_beta0(self, theta1, sim_grid):
        J, K = j_matrix(theta1, sim_grid, 0.0), k_matrix(theta1, sim_grid, 0.0)
        np.testing.assert_allclose(K, J, rtol=1e-12, atol=1e-12 * np.abs(J).max())

    @pytest.mark.parametrize("beta", [0.2, 0.5, 1.0])
    def test_k_is_monte_carlo_score_covariance(self, theta1, sim_grid, beta, rng):
        t = cell_table(theta1, sim_grid)
        n = 10**5
        cells = rng.choice(t.probs.size, size=n, p=t.probs)
        u = (t.probs ** (beta - 1))[:, None] * t.grads
        draws = u[cells]
        emp = np.cov(draws, rowvar=False)
        # standard error of a sample covariance entry from the fourth moments
        c = draws - draws.mean(axis=0)
        se = np.sqrt(np.var(c[:, :, None] * c[:, None, :], axis=0) / n)
        assert np.all(np.abs(emp - k_matrix(theta1, sim_grid, beta)) < 4 * se)

    @settings(max_examples=50, deadline=None)
    @given(thetas, grids(), st.floats(0.0, 1.0))
    def test_k_psd_and_symmetric(self, theta, grid, beta):
        K = k_matrix(theta, grid, beta)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * max(1.0, np.abs(K).max())


class TestSandwich:
    def test_beta0_is_inverse_fisher(self, theta1, sim_grid):
        s = sandwich(theta1, sim_grid, 0.0)
        np.testing.assert_allclose(s.Sigma, np.linalg.inv(s.J), rtol=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(thetas, grids(), st.floats(0.0, 1.0), st.floats(0.25, 4.0))
    def test_scaling(self, theta, grid, beta, s):
        base = sandwich(theta, grid, beta).Sigma
        scaled = sandwich(theta.scaled(1 / s), InspectionGrid(np.asarray(grid.times) * s), beta).Sigma
        np.testing.assert_allclose(scaled, base / s**2, rtol=1e-8, atol=1e-10 * np.abs(base).max() / s**2)

    def test_symmetric(self, theta1, sim_grid):
        S = sandwich(theta1, sim_grid, 0.7).Sigma
        assert np.abs(S - S.T).max() < 1e-10

    def test_degenerate_grid(self, theta1):
        with pytest.raises(SingularityError, match="degenerate"):
            sandwich(theta1, InspectionGrid((50.0, 100.0)), 0.0)

    def test_standard_errors(self, theta1, sim_grid):
        s = sandwich(theta1, sim_grid, 0.3)
        np.testing.assert_allclose(s.standard_errors(100), np.sqrt(np.diag(s.Sigma) / 100))


class TestInfluence:
    @pytest.mark.parametrize("theta", SCENARIOS)
    @pytest.mark.parametrize("beta", [0.0, 0.5])
    def test_contamination_path(self, theta, beta, sim_grid):
        p = cell_table(theta, sim_grid).probs
        IF = influence_by_cell(theta, sim_grid, beta)
        for cell in range(p.size):
            deriv = path_derivative(p, cell, sim_grid, beta, theta, 1e-3)
            assert np.linalg.norm(deriv - IF[cell]) <= 0.01 * np.linalg.norm(IF[cell])

    def test_one_sided_error_is_first_order(self, sim_grid):
        # the forward quotient carries an O(eps) bias that is largest on rare cells
        theta = Theta(6.3, 2.1, 4.2)
        p = cell_table(theta, sim_grid).probs
        IF = influence_by_cell(theta, sim_grid, 0.0)
        cell = p.size - 1
        errs = []
        for eps in (1e-3, 1e-4):
            contaminated = (1 - eps) * p + eps * np.eye(p.size)[cell]
            fwd = (solve_functional(contaminated, sim_grid, 0.0, theta) - theta.as_array()) / eps
            errs.append(np.linalg.norm(fwd - IF[cell]) / np.linalg.norm(IF[cell]))
        assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.05)

    @pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
    def test_mean_zero(self, theta1, sim_grid, beta):
        p = cell_table(theta1, sim_grid).probs
        IF = influence_by_cell(theta1, sim_grid, beta)
        assert np.abs(p @ IF).max() < 1e-10

    def test_constant_within_cell(self, theta1, sim_grid):
        a = influence_point(BivariateObservation(0.21, 0.9), theta1, sim_grid, 0.5)
        b = influence_point(BivariateObservation(0.29, 0.35), theta1, sim_grid, 0.5)
        assert a.cell == b.cell
        np.testing.assert_array_equal(a.value, b.value)

    def test_more_robust_at_larger_beta(self, theta1, sim_grid):
        def sup(beta):
            return np.linalg.norm(influence_by_cell(theta1, sim_grid, beta), axis=1).max()

        assert sup(1.0) <= sup(0.2)


class TestWaldInfluence:
    theta0 = Theta(4.5, 3.0, 3.0)
    a0 = np.array([0.0, 1.0, -1.0])

    def m_functional(self, freqs, grid, beta):
        th = solve_functional(freqs, grid, beta, self.theta0)
        Sigma = sandwich(Theta.from_array(th), grid, beta).Sigma
        return (self.a0 @ th) ** 2 / (self.a0 @ Sigma @ self.a0)

    def test_second_difference(self, sim_grid):
        beta, eps = 0.5, 1e-3
        p = cell_table(self.theta0, sim_grid).probs
        if2 = wald_influence2_by_cell(self.theta0, sim_grid, beta)
        for cell in range(p.size):
            delta = np.eye(p.size)[cell]
            up = self.m_functional((1 - eps) * p + eps * delta, sim_grid, beta)
            down = self.m_functional((1 + eps) * p - eps * delta, sim_grid, beta)
            # M vanishes on the uncontaminated model
            second = (up + down) / eps**2
            assert second == pytest.approx(if2[cell], rel=0.02, abs=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0.0, 1.0))
    def test_non_negative(self, x1, x2, beta):
        grid = InspectionGrid((0.2, 0.3, 0.4))
        v = wald_influence2(BivariateObservation(x1, x2), self.theta0, grid, beta)
        assert v >= 0
        assert np.isfinite(v)

    def test_zero_exactly_on_kernel(self, sim_grid):
        IF = influence_by_cell(self.theta0, sim_grid, 0.5)
        if2 = wald_influence2_by_cell(self.theta0, sim_grid, 0.5)
        proj = IF @ self.a0
        # the tie cells carry no information about lambda1 - lambda2
        for cell in range(IF.shape[0]):
            if abs(proj[cell]) < 1e-12 * np.abs(proj).max():
                assert if2[cell] < 1e-20
            else:
                assert if2[cell] > 0

    def test_requires_null(self, theta1, sim_grid):
        with pytest.raises(ValueError, match="null"):
            wald_influence2(BivariateObservation(0.1, 0.2), theta1, sim_grid, 0.5)

    def test_point_matches_cells(self, sim_grid):
        x = BivariateObservation(0.35, 0.31)
        by_cell = wald_influence2_by_cell(self.theta0, sim_grid, 0.2)
        from mobecr.model import classify_cell

        assert wald_influence2(x, self.theta0, sim_grid, 0.2) == pytest.approx(by_cell[classify_cell(x, sim_grid)])


@pytest.mark.slow
@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_sandwich_matches_large_monte_carlo(theta1, sim_grid, beta):
    # 10^5 replicates bring the off-diagonal Monte Carlo error down to about 3%
    from mobecr.estimation import FitConfig, curvature_learning_rate, fit_many

    n, reps = 5000, 100_000
    rng = np.random.default_rng([2024, int(beta * 10)])
    counts = rng.multinomial(n, cell_table(theta1, sim_grid).probs, size=reps).astype(float)
    cfg = FitConfig(learning_rate=curvature_learning_rate(theta1, sim_grid, beta, n), threshold=1e-9,
                    initial_theta=theta1)
    fits = fit_many(sim_grid, counts, beta, cfg)
    assert fits.converged.all()
    Z = np.sqrt(n) * (fits.theta - theta1.as_array())
    emp = np.cov(Z, rowvar=False)
    c = Z - Z.mean(axis=0)
    se = np.sqrt(np.var(c[:, :, None] * c[:, None, :], axis=0) / reps)
    Sigma = sandwich(theta1, sim_grid, beta).Sigma
    assert np.all(np.abs(emp - Sigma) < 4 * se)
    assert np.all(np.abs(emp - Sigma) < 0.1 * np.abs(Sigma))
