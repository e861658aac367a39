"""Wald-type test of equal cause-specific rates and a bootstrap goodness-of-fit test."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .asymptotics import DEFAULT_CONTRAST, _contrast_variance, sandwich
from .errors import DomainError, NullPointError
from .estimation import CountData, FitConfig, FitResult, fit, fit_many
from .model import InspectionGrid, Theta, cell_arrays, cell_table


@dataclass(frozen=True)
class WaldReport:
    statistic: float
    critical_value: float
    alpha: float
    reject: bool
    contrast: np.ndarray
    p_value: float


def _contrast(a0) -> np.ndarray:
    a0 = np.asarray(a0, dtype=float)
    if a0.shape != (3,):
        raise DomainError("the contrast must be a 3-vector")
    return a0


def wald_statistic(theta_hat: Theta, grid: InspectionGrid, beta: float, n: float, a0=DEFAULT_CONTRAST) -> float:
    """``M_n = n (a0' theta)^2 / (a0' Sigma(theta) a0)``."""
    a0 = _contrast(a0)
    var = _contrast_variance(sandwich(theta_hat, grid, beta).Sigma, a0)
    return float(n * (a0 @ theta_hat.as_array()) ** 2 / var)


def wald_test(
    theta_hat: Theta,
    grid: InspectionGrid,
    beta: float,
    n: float,
    alpha: float = 0.05,
    a0=DEFAULT_CONTRAST,
) -> WaldReport:
    """Test ``a0' theta = 0`` (by default ``lambda1 = lambda2``) against the chi-square(1) law."""
    if n < 1:
        raise DomainError("sample size must be at least 1")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    stat = wald_statistic(theta_hat, grid, beta, n, a0)
    crit = float(stats.chi2.isf(alpha, df=1))
    return WaldReport(stat, crit, alpha, stat >= crit, _contrast(a0), float(stats.chi2.sf(stat, df=1)))


@dataclass(frozen=True)
class PowerComponents:
    m: float  # (a0' theta)^2 / (a0' Sigma a0)
    sigma2: float  # grad(m)' Sigma grad(m)
    grad_m: np.ndarray


def power_components(theta_star: Theta, grid: InspectionGrid, beta: float, a0=DEFAULT_CONTRAST) -> PowerComponents:
    a0 = _contrast(a0)
    Sigma = sandwich(theta_star, grid, beta).Sigma
    var = _contrast_variance(Sigma, a0)
    shift = float(a0 @ theta_star.as_array())
    if shift == 0:
        raise NullPointError("theta_star satisfies the null hypothesis; the power approximation is degenerate")
    grad_m = 2.0 * shift * a0 / var
    return PowerComponents(shift**2 / var, float(grad_m @ Sigma @ grad_m), grad_m)


def wald_power(
    theta_star: Theta,
    grid: InspectionGrid,
    beta: float,
    n: float,
    alpha: float = 0.05,
    a0=DEFAULT_CONTRAST,
    method: str = "normal",
) -> float:
    """Approximate power of the Wald test at an alternative ``theta_star``.

    ``method="normal"`` linearises ``m(theta_hat, theta_hat)`` around
    ``theta_star``::

        1 - Phi((chi2_{1,alpha} / sqrt(n) - sqrt(n) m) / sigma)

    ``method="noncentral"`` uses the chi-square(1) law with noncentrality
    ``n m`` instead.
    """
    comp = power_components(theta_star, grid, beta, a0)
    crit = float(stats.chi2.isf(alpha, df=1))
    if method == "normal":
        z = (crit / np.sqrt(n) - np.sqrt(n) * comp.m) / np.sqrt(comp.sigma2)
        return float(stats.norm.sf(z))
    if method == "noncentral":
        return float(stats.ncx2.sf(crit, df=1, nc=n * comp.m))
    raise ValueError(f"unknown power method {method!r}")


# ---------------------------------------------------------------------------


def expected_counts(theta: Theta, grid: InspectionGrid, n: float) -> np.ndarray:
    return n * cell_table(theta, grid).probs


def gof_statistic(data: CountData, theta_hat: Theta, grid: InspectionGrid) -> float:
    """``S = sum_l |N_l - n p_l(theta_hat)|`` over all cells including the survivors."""
    return float(np.abs(data.counts - expected_counts(theta_hat, grid, data.counts.sum())).sum())


@dataclass(frozen=True)
class GofReport:
    statistic: float
    p_value: float
    bootstrap_count: int
    expected_counts: np.ndarray
    theta_hat: Theta
    dropped: int = 0
    warning: str | None = None
    bootstrap_statistics: np.ndarray = field(default=None, repr=False)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for one bootstrap/Monte Carlo replicate, keyed by ``(seed, index)``."""
    return np.random.default_rng([seed, index])


def parametric_bootstrap_counts(theta: Theta, grid: InspectionGrid, n: int, B: int, seed: int) -> np.ndarray:
    probs = cell_table(theta, grid).probs
    return np.stack([replicate_rng(seed, b).multinomial(n, probs) for b in range(B)]).astype(float)


def gof_bootstrap_pvalue(
    data: CountData,
    grid: InspectionGrid,
    beta: float,
    B: int = 10_000,
    seed: int = 0,
    config: FitConfig = FitConfig(),
    fitted: FitResult | None = None,
) -> GofReport:
    """Parametric-bootstrap p-value of the L1 goodness-of-fit statistic.

    Each bootstrap sample is multinomial at the fitted cell probabilities and is
    refitted starting from the original estimate. The p-value counts bootstrap
    statistics strictly greater than the observed one. Replicates whose refit
    does not converge are dropped; more than 1% dropped raises a warning.
    """
    if B < 1:
        raise DomainError("B must be at least 1")
    n = data.counts.sum()
    if not float(n).is_integer():
        raise DomainError("the bootstrap needs integer counts")
    n = int(n)
    if fitted is None:
        fitted = fit(grid, data, beta, config)
    theta_hat = fitted.theta_hat
    observed = gof_statistic(data, theta_hat, grid)

    boot = parametric_bootstrap_counts(theta_hat, grid, n, B, seed)
    refits = fit_many(grid, boot, beta, config, initial=theta_hat.as_array())
    ok = refits.converged
    expected = n * _probs_batch(refits.theta[ok], grid)
    boot_stats = np.abs(boot[ok] - expected).sum(axis=1)
    dropped = int((~ok).sum())
    note = None
    if dropped > 0.01 * B:
        note = f"{dropped} of {B} bootstrap refits did not converge and were dropped"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    kept = boot_stats.size
    p_value = float(np.sum(boot_stats > observed) / kept) if kept else float("nan")
    return GofReport(
        observed, p_value, B, expected_counts(theta_hat, grid, n), theta_hat, dropped, note, boot_stats,
    )


def _probs_batch(theta: np.ndarray, grid: InspectionGrid) -> np.ndarray:
    return cell_arrays(theta, grid.as_array())[0]


def bootstrap_bias(
    data: CountData,
    grid: InspectionGrid,
    beta: float,
    B: int = 1000,
    seed: int = 0,
    config: FitConfig = FitConfig(),
    fitted: FitResult | None = None,
) -> tuple[np.ndarray, int]:
    """Parametric-bootstrap bias ``mean(theta*) - theta_hat`` and the number of refits used."""
    n = int(data.counts.sum())
    if fitted is None:
        fitted = fit(grid, data, beta, config)
    boot = parametric_bootstrap_counts(fitted.theta_hat, grid, n, B, seed)
    refits = fit_many(grid, boot, beta, config, initial=fitted.theta_hat.as_array())
    ok = refits.converged
    return refits.theta[ok].mean(axis=0) - fitted.theta_hat.as_array(), int(ok.sum())
