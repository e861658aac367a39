"""Maximum likelihood and minimum density power divergence estimation.

Both estimators minimise an objective ``H`` over ``theta`` by cyclic
coordinate descent with a fixed learning rate::

    lambda_j <- lambda_j - h * dH/dlambda_j(current theta)     j = 0, 1, 2

where each partial is evaluated with the coordinates already updated in the
same sweep. ``H`` is the negative log-likelihood when ``beta == 0`` and the
DPD objective ``sum p^(1+beta) - (1+beta)/beta * sum (N/n) p^beta`` otherwise.
The descent is vectorised over datasets (:func:`fit_many`) so Monte Carlo and
bootstrap studies run as one batch; :func:`fit` is the single-dataset view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._descent import descend_batch
from .asymptotics import _jk_arrays
from .errors import DomainError, InvalidTuningError
from .model import PROB_FLOOR, InspectionGrid, Theta, cell_arrays, cell_label

MIN_RATE = 1e-8


@dataclass(frozen=True)
class CountData:
    """Cell counts in flat order ``(N11, N12, N10, ..., NK1, NK2, NK0, Ns)``.

    Counts are normally integers; non-negative real values are accepted so
    that exact model frequencies and contaminated distributions can be fitted.
    """

    counts: np.ndarray

    def __init__(self, counts: Sequence[float]):
        arr = np.array(counts, dtype=float)
        if arr.ndim != 1 or arr.size < 4 or (arr.size - 1) % 3:
            raise DomainError(f"expected 3K+1 counts, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("counts must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def n(self) -> float:
        total = float(self.counts.sum())
        return int(total) if total.is_integer() else total

    @property
    def K(self) -> int:
        return (self.counts.size - 1) // 3

    @property
    def frequencies(self) -> np.ndarray:
        n = self.counts.sum()
        return self.counts / n if n > 0 else np.zeros_like(self.counts)

    @property
    def censored(self) -> float:
        return float(self.counts[-1])

    def labelled(self) -> dict[str, float]:
        return {cell_label(i, self.K): float(c) for i, c in enumerate(self.counts)}

    def __eq__(self, other) -> bool:
        return isinstance(other, CountData) and np.array_equal(self.counts, other.counts)

    def __hash__(self) -> int:
        return hash(self.counts.tobytes())


def _check_shapes(grid: InspectionGrid, data: CountData) -> None:
    if data.K != grid.K:
        raise DomainError(f"data has {data.K} intervals but the grid has {grid.K}")


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise InvalidTuningError(f"beta must be a non-negative number, got {beta!r}")
    return beta


# ---------------------------------------------------------------------------
# batched objective / gradient kernels; counts has shape (B, M), theta (B, 3)


def _nll(probs: np.ndarray, counts: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    terms = np.where(counts > 0, counts * logp, 0.0)
    return -terms.sum(axis=-1)


def _dpd(probs: np.ndarray, freqs: np.ndarray, beta: float) -> np.ndarray:
    return (probs ** (1.0 + beta)).sum(axis=-1) - (1.0 + beta) / beta * (freqs * probs**beta).sum(axis=-1)


def _objective(probs, counts, freqs, beta):
    return _nll(probs, counts) if beta == 0 else _dpd(probs, freqs, beta)


def _gradient(probs, grads, counts, freqs, beta):
    p = np.maximum(probs, PROB_FLOOR)
    if beta == 0:
        w = -counts / p
    else:
        w = (1.0 + beta) * (p**beta - freqs * p ** (beta - 1.0))
    return np.einsum("...l,...lj->...j", w, grads)


def neg_log_likelihood(theta: Theta, grid: InspectionGrid, data: CountData) -> float:
    """``-sum_l N_l log p_l(theta)`` (multinomial coefficient dropped).

    Returns ``inf`` when a cell with a positive count has zero probability.
    """
    _check_shapes(grid, data)
    probs, _ = cell_arrays(theta.as_array(), grid.as_array())
    return float(_nll(probs, data.counts))


def dpd_objective(theta: Theta, grid: InspectionGrid, data: CountData, beta: float) -> float:
    """DPD objective ``H_n(beta)``; the data-only term of the divergence is dropped."""
    beta = _check_beta(beta)
    if beta == 0:
        raise InvalidTuningError("beta = 0 is the likelihood limit; use neg_log_likelihood")
    _check_shapes(grid, data)
    probs, _ = cell_arrays(theta.as_array(), grid.as_array())
    return float(_dpd(probs, data.frequencies, beta))


def dpd_divergence(theta: Theta, grid: InspectionGrid, data: CountData, beta: float) -> float:
    """Full density power divergence between the empirical and model cell distributions."""
    freqs = data.frequencies
    return dpd_objective(theta, grid, data, beta) + float((freqs ** (1.0 + beta)).sum()) / beta


def objective(theta: Theta, grid: InspectionGrid, data: CountData, beta: float) -> float:
    """The objective minimised by :func:`fit`: NLL for ``beta == 0``, DPD otherwise."""
    beta = _check_beta(beta)
    return neg_log_likelihood(theta, grid, data) if beta == 0 else dpd_objective(theta, grid, data, beta)


def dpd_gradient(theta: Theta, grid: InspectionGrid, data: CountData, beta: float) -> np.ndarray:
    """Gradient of :func:`objective` with respect to ``(lambda0, lambda1, lambda2)``.

    For ``beta > 0`` this is ``(1+beta) sum_l (p_l^beta - f_l p_l^(beta-1)) g_l``
    with ``f_l = N_l / n``; for ``beta == 0`` it is ``-sum_l N_l g_l / p_l``.
    """
    beta = _check_beta(beta)
    _check_shapes(grid, data)
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    return _gradient(probs, grads, data.counts, data.frequencies, beta)


def mle_score(theta: Theta, grid: InspectionGrid, data: CountData) -> np.ndarray:
    """Likelihood estimating equations written in terms of interval totals.

    Component ``j`` is ``S_j/lambda_j - N/lambda + sum_i N_i (tau_i e^{-lambda tau_i}
    - tau_{i-1} e^{-lambda tau_{i-1}}) / (e^{-lambda tau_{i-1}} - e^{-lambda tau_i})
    - N_s tau_K`` where ``S_j`` is the total number of failures from cause ``j``
    and ``N_i`` the number of failures in interval ``i``.
    """
    _check_shapes(grid, data)
    lam = theta.total
    tau = np.concatenate(([0.0], grid.as_array()))
    blocks = data.counts[:-1].reshape(grid.K, 3)  # columns: cause 1, cause 2, both
    per_interval = blocks.sum(axis=1)
    e = np.exp(-lam * tau)
    common = -per_interval.sum() / lam
    common += np.sum(per_interval * (tau[1:] * e[1:] - tau[:-1] * e[:-1]) / (e[:-1] - e[1:]))
    common -= data.censored * tau[-1]
    by_cause = np.array([blocks[:, 2].sum(), blocks[:, 0].sum(), blocks[:, 1].sum()])
    return by_cause / theta.as_array() + common


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Coordinate-descent settings.

    ``backtracking`` halves the learning rate whenever a full sweep increases
    the objective (the sweep is undone) and restores it after
    ``restore_after`` consecutive accepted sweeps. It is off by default, which
    is the plain fixed-step algorithm.
    """

    learning_rate: float = 0.01
    threshold: float = 1e-4
    max_iterations: int = 1_000_000
    initial_theta: Theta | None = None
    backtracking: bool = False
    restore_after: int = 10

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if not self.threshold > 0:
            raise DomainError("threshold must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")


@dataclass(frozen=True)
class FitResult:
    theta_hat: Theta
    objective_value: float
    iterations: int
    converged: bool
    beta: float
    learning_rate: float = field(default=float("nan"))

    @property
    def objective_kind(self) -> str:
        return "MLE" if self.beta == 0 else f"DPDE(beta={self.beta:g})"


@dataclass(frozen=True)
class BatchFit:
    """Estimates for a batch of datasets fitted in one vectorised descent."""

    theta: np.ndarray  # (B, 3)
    objective: np.ndarray  # (B,)
    iterations: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    learning_rate: np.ndarray  # (B,) final learning rate
    beta: float

    def __len__(self) -> int:
        return self.theta.shape[0]

    def result(self, b: int) -> FitResult:
        return FitResult(
            Theta.from_array(self.theta[b]),
            float(self.objective[b]),
            int(self.iterations[b]),
            bool(self.converged[b]),
            self.beta,
            float(self.learning_rate[b]),
        )


class _Kernel:
    """Lean objective/gradient evaluation for the descent loop.

    Uses the block structure ``p_ik = (rate_k / lambda) * mass_i`` instead of
    materialising the full ``(B, M, 3)`` gradient tensor.
    """

    def __init__(self, times, counts, beta):
        self.tau = np.concatenate(([0.0], np.asarray(times, dtype=float)))
        self.gap = np.diff(self.tau)
        self.K = self.gap.size
        self.counts = counts
        totals = counts.sum(axis=1, keepdims=True)
        self.freqs = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
        self.beta = beta

    def _parts(self, theta):
        lam = theta.sum(axis=1)[:, None]
        e = np.exp(-lam * self.tau)
        mass = e[:, :-1] * -np.expm1(-lam * self.gap)
        share = theta[:, [1, 2, 0]] / lam
        probs = np.concatenate(
            [(mass[:, :, None] * share[:, None, :]).reshape(-1, 3 * self.K), e[:, -1:]], axis=1
        )
        return lam, e, mass, share, probs

    def value(self, theta, idx=slice(None)):
        probs = self._parts(theta)[-1]
        return _objective(probs, self.counts[idx], self.freqs[idx], self.beta)

    def gradient(self, theta, idx=slice(None)):
        lam, e, mass, share, probs = self._parts(theta)
        p = np.maximum(probs, PROB_FLOOR)
        if self.beta == 0:
            w = -self.counts[idx] / p
        else:
            w = (1.0 + self.beta) * (p**self.beta - self.freqs[idx] * p ** (self.beta - 1.0))
        wi = w[:, :-1].reshape(-1, self.K, 3)
        dmass = self.tau[1:] * e[:, 1:] - self.tau[:-1] * e[:, :-1]
        shared = ((wi * share[:, None, :]).sum(axis=2) * (dmass - mass / lam)).sum(axis=1)
        shared -= w[:, -1] * self.tau[-1] * e[:, -1]
        own = (wi * mass[:, :, None]).sum(axis=1) / lam  # per slot (cause 1, cause 2, both)
        return own[:, [2, 0, 1]] + shared[:, None]


def _descend_numpy(times, counts, beta, theta0, h0, c, max_iter, backtracking, restore_after) -> BatchFit:
    """Vectorised reference implementation of :func:`_descend`."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    B = counts.shape[0]
    kern = _Kernel(times, counts, beta)
    theta = np.array(np.broadcast_to(theta0, (B, 3)), dtype=float)
    h = np.array(np.broadcast_to(h0, (B,)), dtype=float)
    h_base = h.copy()

    value = kern.value(theta)
    iterations = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    streak = np.zeros(B, dtype=int)
    active = np.arange(B)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while active.size:
            idx = active if active.size < B else slice(None)
            th = theta[active]
            start = th.copy()
            step = h[active]
            for j in range(3):
                g = kern.gradient(th, idx)[:, j]
                th[:, j] = np.maximum(th[:, j] - step * g, MIN_RATE)
            new_value = kern.value(th, idx)
            old_value = value[active]
            iterations[active] += 1

            if backtracking:
                worse = ~(new_value <= old_value)
                keep = ~worse
                h[active[worse]] *= 0.5
                streak[active[worse]] = 0
                streak[active[keep]] += 1
                restore = active[keep][streak[active[keep]] >= restore_after]
                h[restore] = h_base[restore]
                streak[restore] = 0
            else:
                keep = np.ones(active.size, dtype=bool)

            moved = np.max(np.abs(th - start), axis=1)
            done = keep & (moved < c) & (np.abs(new_value - old_value) < c)
            theta[active[keep]] = th[keep]
            value[active[keep]] = new_value[keep]
            converged[active[done]] = True
            active = active[~done & (iterations[active] < max_iter)]

    return BatchFit(theta, value, iterations, converged, h, beta)


def _descend(times, counts, beta, theta0, h0, c, max_iter, backtracking, restore_after) -> BatchFit:
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    B = counts.shape[0]
    totals = counts.sum(axis=1, keepdims=True)
    freqs = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    theta0 = np.ascontiguousarray(np.broadcast_to(np.asarray(theta0, dtype=float), (B, 3)))
    h0 = np.ascontiguousarray(np.broadcast_to(np.asarray(h0, dtype=float), (B,)))
    tau = np.concatenate(([0.0], np.asarray(times, dtype=float)))
    theta, value, iterations, converged, h = descend_batch(
        tau, np.ascontiguousarray(counts), freqs, float(beta), theta0, h0, float(c),
        int(max_iter), bool(backtracking), int(restore_after), MIN_RATE,
    )
    return BatchFit(theta, value, iterations, converged, h, beta)


def fit_many(
    grid: InspectionGrid,
    counts,
    beta: float,
    config: FitConfig = FitConfig(),
    initial=None,
    learning_rate=None,
) -> BatchFit:
    """Fit every row of ``counts`` (shape ``(B, M)``) by coordinate descent.

    ``initial`` (shape ``(3,)`` or ``(B, 3)``) and ``learning_rate`` (scalar or
    ``(B,)``) override the values in ``config`` per dataset.
    """
    beta = _check_beta(beta)
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    if counts.shape[1] != grid.n_cells:
        raise DomainError(f"counts have {counts.shape[1]} cells, grid needs {grid.n_cells}")
    if initial is None:
        if config.initial_theta is None:
            raise DomainError("an initial theta is required (config.initial_theta or initial=)")
        initial = config.initial_theta.as_array()
    h = config.learning_rate if learning_rate is None else learning_rate
    return _descend(
        grid.as_array(), counts, beta, np.asarray(initial, dtype=float), h,
        config.threshold, config.max_iterations, config.backtracking, config.restore_after,
    )


def fit(grid: InspectionGrid, data: CountData, beta: float, config: FitConfig = FitConfig()) -> FitResult:
    """MLE (``beta == 0``) or MDPDE of theta by cyclic coordinate descent.

    Without ``config.initial_theta`` the start is the minimiser over the
    default :func:`grid_search_init` lattice.
    """
    _check_shapes(grid, data)
    beta = _check_beta(beta)
    init = config.initial_theta or grid_search_init(grid, data, beta)
    return fit_many(grid, data.counts[None, :], beta, config, initial=init.as_array()).result(0)


def grid_search_init(
    grid: InspectionGrid,
    data: CountData,
    beta: float,
    bounds: Sequence[tuple[float, float]] = ((0.5, 5.0),) * 3,
    resolution: int = 10,
) -> Theta:
    """Minimiser of the objective over a regular ``resolution^3`` lattice."""
    beta = _check_beta(beta)
    _check_shapes(grid, data)
    if resolution < 2:
        raise DomainError("resolution must be at least 2")
    axes = []
    for lo, hi in bounds:
        if not 0 < lo <= hi:
            raise DomainError(f"bounds must be positive intervals, got {(lo, hi)}")
        axes.append(np.linspace(lo, hi, resolution))
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    probs, _ = cell_arrays(lattice, grid.as_array())
    values = _objective(probs, data.counts[None, :], data.frequencies[None, :], beta)
    return Theta.from_array(lattice[int(np.nanargmin(values))])


def curvature_learning_rate(theta: Theta, grid: InspectionGrid, beta: float, n: float = 1.0) -> float:
    """Learning rate ``1 / max_j E[d^2 H / d lambda_j^2]`` at ``theta``.

    A step of this size keeps every coordinate update stable, so the descent
    converges quickly to tight thresholds. ``n`` only matters for the
    likelihood, whose objective grows with the sample size.
    """
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    J = _jk_arrays(probs, grads, beta)[0]
    scale = n if beta == 0 else 1.0 + beta
    return float(1.0 / (scale * np.max(np.diag(J))))
