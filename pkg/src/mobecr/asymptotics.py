"""Sandwich covariance and influence functions of the minimum DPD estimator.

With ``g_l = d p_l / d theta`` the estimating function of the MDPDE has
sensitivity ``J = sum_l p_l^(beta-1) g_l g_l^T`` and per-observation variability
``K = sum_l p_l^(2 beta - 1) g_l g_l^T - xi xi^T``, ``xi = sum_l p_l^beta g_l``.
``sqrt(n) (theta_hat - theta)`` is asymptotically normal with covariance
``Sigma = J^-1 K J^-1``. ``beta = 0`` gives the multinomial MLE, where
``K = J`` is the Fisher information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularityError
from .model import PROB_FLOOR, BivariateObservation, InspectionGrid, Theta, cell_arrays, classify_cell

MAX_CONDITION = 1e12

DEFAULT_CONTRAST = np.array([0.0, 1.0, -1.0])


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _jk_arrays(probs: np.ndarray, grads: np.ndarray, beta: float):
    p = np.maximum(probs, PROB_FLOOR)
    outer = grads[..., :, None] * grads[..., None, :]  # (..., M, 3, 3)
    J = np.einsum("...l,...lij->...ij", p ** (beta - 1.0), outer)
    xi = np.einsum("...l,...lj->...j", p**beta, grads)
    K = np.einsum("...l,...lij->...ij", p ** (2.0 * beta - 1.0), outer) - xi[..., :, None] * xi[..., None, :]
    return _symmetrize(J), _symmetrize(K), xi


def j_matrix(theta: Theta, grid: InspectionGrid, beta: float) -> np.ndarray:
    """``J_beta(theta) = sum_l p_l^(beta-1) g_l g_l^T``."""
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    return _jk_arrays(probs, grads, beta)[0]


def k_matrix(theta: Theta, grid: InspectionGrid, beta: float) -> np.ndarray:
    """Covariance of the per-unit estimating function (scaled by ``1/(1+beta)``)."""
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    return _jk_arrays(probs, grads, beta)[1]


def safe_inverse(J: np.ndarray, what: str = "J") -> np.ndarray:
    """SVD-based inverse with a condition-number guard."""
    U, s, Vt = np.linalg.svd(J)
    if s[-1] <= 0 or not np.all(np.isfinite(s)) or s[0] / s[-1] > MAX_CONDITION:
        cond = np.inf if s[-1] <= 0 else s[0] / s[-1]
        raise SingularityError(
            f"{what} is numerically singular (condition number {cond:.3g}); "
            "the inspection grid is degenerate for this parameter"
        )
    return _symmetrize((Vt.T / s) @ U.T)


@dataclass(frozen=True)
class SandwichCovariance:
    """``J``, ``K`` and ``Sigma = J^-1 K J^-1``; ``Var(theta_hat) ~ Sigma / n``."""

    J: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray
    J_inv: np.ndarray

    def standard_errors(self, n: int) -> np.ndarray:
        return np.sqrt(np.diag(self.Sigma) / n)


def sandwich_from_arrays(probs: np.ndarray, grads: np.ndarray, beta: float) -> SandwichCovariance:
    J, K, _ = _jk_arrays(probs, grads, beta)
    J_inv = safe_inverse(J)
    Sigma = _symmetrize(J_inv @ K @ J_inv)
    return SandwichCovariance(J, K, Sigma, J_inv)


def sandwich(theta: Theta, grid: InspectionGrid, beta: float) -> SandwichCovariance:
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    return sandwich_from_arrays(probs, grads, beta)


def sigma_batch(theta, times, beta: float) -> np.ndarray:
    """Sandwich covariances for a batch of parameters, shape ``(B, 3, 3)``.

    No singularity guard; callers working on batches check conditioning themselves.
    """
    probs, grads = cell_arrays(theta, times)
    J, K, _ = _jk_arrays(probs, grads, beta)
    J_inv = np.linalg.inv(J)
    return _symmetrize(J_inv @ K @ J_inv)


def influence_by_cell(theta: Theta, grid: InspectionGrid, beta: float) -> np.ndarray:
    """Influence function of the MDPDE evaluated in every cell, shape ``(M, 3)``.

    The IF depends on the contaminating point only through the cell holding
    it: ``IF_l = J^-1 (p_l^(beta-1) g_l - xi)``.
    """
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    J, _, xi = _jk_arrays(probs, grads, beta)
    J_inv = safe_inverse(J)
    p = np.maximum(probs, PROB_FLOOR)
    score = (p ** (beta - 1.0))[:, None] * grads - xi
    return score @ J_inv.T


@dataclass(frozen=True)
class InfluenceVector:
    """First-order influence of the MDPDE and, if a contrast was given, of the Wald statistic."""

    value: np.ndarray
    cell: int
    wald_second_order: float | None = None


def influence_point(x: BivariateObservation, theta: Theta, grid: InspectionGrid, beta: float) -> InfluenceVector:
    """Influence function of the MDPDE functional at the point ``x``."""
    cell = classify_cell(x, grid)
    return InfluenceVector(influence_by_cell(theta, grid, beta)[cell], cell)


def _contrast_variance(Sigma: np.ndarray, a0: np.ndarray) -> float:
    v = float(a0 @ Sigma @ a0)
    if not v > 0:
        raise SingularityError(f"a0' Sigma a0 = {v:.3g} is not positive")
    return v


def _null_contrast(a0, theta0: Theta) -> np.ndarray:
    a0 = np.asarray(a0, dtype=float)
    th = theta0.as_array()
    if abs(a0 @ th) > 1e-10 * max(1.0, np.abs(th).max()):
        raise ValueError(f"theta0 does not satisfy the null: a0' theta0 = {a0 @ th:.3g}")
    return a0


def wald_influence2(
    x: BivariateObservation,
    theta0: Theta,
    grid: InspectionGrid,
    beta: float,
    a0=DEFAULT_CONTRAST,
) -> float:
    """Second-order influence function of the Wald statistic at a null parameter.

    The first-order IF vanishes when ``a0' theta0 = 0``; the second-order one is
    ``2 (a0' IF)^2 / (a0' Sigma(theta0) a0)``.
    """
    a0 = _null_contrast(a0, theta0)
    var = _contrast_variance(sandwich(theta0, grid, beta).Sigma, a0)
    infl = influence_point(x, theta0, grid, beta).value
    return float(2.0 * (a0 @ infl) ** 2 / var)


def wald_influence2_by_cell(theta0: Theta, grid: InspectionGrid, beta: float, a0=DEFAULT_CONTRAST) -> np.ndarray:
    a0 = _null_contrast(a0, theta0)
    var = _contrast_variance(sandwich(theta0, grid, beta).Sigma, a0)
    return 2.0 * (influence_by_cell(theta0, grid, beta) @ a0) ** 2 / var
