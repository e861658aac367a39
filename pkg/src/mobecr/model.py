"""Marshall-Olkin bivariate exponential (MOBE) model under interval monitoring.

Units are put on test and inspected at times ``tau_1 < ... < tau_K``. For every
interval ``(tau_{i-1}, tau_i]`` the experimenter records how many units failed
from cause 1, cause 2 or both causes at once; units alive at ``tau_K`` are
censored. The counts are multinomial over ``M = 3K + 1`` cells, stored flat in
the order::

    (p_11, p_12, p_10, p_21, p_22, p_20, ..., p_K1, p_K2, p_K0, p_s)

Cell indices are 0-based: interval ``i`` (1-based) and cause ``c`` map to
``3 * (i - 1) + CAUSE_SLOT[c]`` and the survival cell is ``M - 1``.

The array-level helpers (:func:`cell_arrays`) broadcast over leading batch
dimensions of ``theta`` and accept non-decreasing time vectors that may contain
repeats or a leading zero; repeated times give empty cells with zero
probability and zero gradient. The dataclass API validates strictly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ClassificationError, DomainError

# position of each cause code inside an interval's block of three cells
CAUSE_SLOT = {1: 0, 2: 1, 0: 2}
SLOT_CAUSE = (1, 2, 0)

PROB_FLOOR = 1e-300
"""Cell probabilities are floored here before logs or negative powers."""


@dataclass(frozen=True)
class Theta:
    """Shock rates ``(lambda0, lambda1, lambda2)`` of the MOBE model.

    ``lambda1`` and ``lambda2`` drive the cause-specific shocks and ``lambda0``
    the common shock that fails both components simultaneously.
    """

    lambda0: float
    lambda1: float
    lambda2: float

    def __post_init__(self) -> None:
        for name in ("lambda0", "lambda1", "lambda2"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"{name} must be a positive finite rate, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def total(self) -> float:
        return self.lambda0 + self.lambda1 + self.lambda2

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda0, self.lambda1, self.lambda2])

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "Theta":
        l0, l1, l2 = (float(v) for v in values)
        return cls(l0, l1, l2)

    def scaled(self, factor: float) -> "Theta":
        return Theta.from_array(self.as_array() * factor)

    def __iter__(self):
        return iter((self.lambda0, self.lambda1, self.lambda2))


@dataclass(frozen=True)
class InspectionGrid:
    """Strictly increasing positive inspection times ``tau_1 < ... < tau_K``."""

    times: tuple[float, ...]

    def __init__(self, times: Iterable[float]):
        values = tuple(float(t) for t in times)
        if len(values) < 1:
            raise DomainError("an inspection grid needs at least one time")
        arr = np.asarray(values)
        if not np.all(np.isfinite(arr)) or arr[0] <= 0 or np.any(np.diff(arr) <= 0):
            raise DomainError(f"inspection times must satisfy 0 < tau_1 < ... < tau_K, got {values}")
        object.__setattr__(self, "times", values)

    @property
    def K(self) -> int:
        return len(self.times)

    @property
    def n_cells(self) -> int:
        return 3 * self.K + 1

    @property
    def horizon(self) -> float:
        return self.times[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.times)

    def scaled(self, factor: float) -> "InspectionGrid":
        return InspectionGrid(np.asarray(self.times) * factor)

    def __len__(self) -> int:
        return self.K


def cell_index(interval: int, cause: int, K: int | None = None) -> int:
    """Flat 0-based index of the cell for a 1-based ``interval`` and cause code."""
    if cause not in CAUSE_SLOT:
        raise ValueError(f"cause must be 0, 1 or 2, got {cause!r}")
    if interval < 1 or (K is not None and interval > K):
        raise ValueError(f"interval must lie in 1..K, got {interval}")
    return 3 * (interval - 1) + CAUSE_SLOT[cause]


def cell_label(index: int, K: int) -> str:
    """Human-readable name of a flat cell index, e.g. ``N21`` or ``Ns``."""
    if index == 3 * K:
        return "Ns"
    i, slot = divmod(index, 3)
    return f"N{i + 1}{SLOT_CAUSE[slot]}"


@dataclass(frozen=True)
class CellTable:
    """Multinomial cell probabilities and their gradients with respect to theta.

    ``probs`` has shape ``(M,)`` and ``grads`` shape ``(M, 3)`` with
    ``grads[l, j] = d p_l / d lambda_j``.
    """

    probs: np.ndarray
    grads: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.probs.shape[0]

    @property
    def K(self) -> int:
        return (self.n_cells - 1) // 3

    @property
    def survival(self) -> float:
        return float(self.probs[-1])

    def prob(self, interval: int, cause: int) -> float:
        return float(self.probs[cell_index(interval, cause, self.K)])

    @property
    def log_grads(self) -> np.ndarray:
        """``d log p_l / d theta``, with probabilities floored at PROB_FLOOR."""
        return self.grads / np.maximum(self.probs, PROB_FLOOR)[:, None]


def cell_arrays(theta, times) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised cell probabilities and gradients.

    Parameters
    ----------
    theta : array_like, shape (..., 3)
        Rates ``(lambda0, lambda1, lambda2)``; leading dimensions are a batch.
    times : array_like, shape (K,)
        Non-decreasing, non-negative inspection times.

    Returns
    -------
    probs : ndarray, shape (..., 3K + 1)
    grads : ndarray, shape (..., 3K + 1, 3)
    """
    theta = np.asarray(theta, dtype=float)
    tau = np.concatenate(([0.0], np.asarray(times, dtype=float)))
    lam = theta.sum(axis=-1)[..., None]  # (..., 1)
    rates = theta[..., [1, 2, 0]]  # per slot: cause 1, cause 2, both

    gap = np.diff(tau)  # (K,)
    head = np.exp(-lam * tau[:-1])  # e^{-lam tau_{i-1}}
    tail = np.exp(-lam * tau[1:])
    # e^{-lam tau_{i-1}} - e^{-lam tau_i} without cancellation
    mass = head * -np.expm1(-lam * gap)
    dmass = tau[1:] * tail - tau[:-1] * head  # d mass / d lam

    share = rates / lam  # (..., 3)
    probs_int = mass[..., :, None] * share[..., None, :]  # (..., K, 3)
    lam3 = lam[..., None]  # (..., 1, 1)
    # d p_{ik} / d lambda_j = [j is k's rate] mass/lam - rate_k mass/lam^2 + share_k dmass
    common = (-rates[..., None, :] * mass[..., :, None] / lam3**2
              + share[..., None, :] * dmass[..., :, None])  # (..., K, 3)
    grads_int = np.repeat(common[..., None], 3, axis=-1)  # (..., K, slot, j)
    own = mass / lam  # (..., K)
    for slot, j in enumerate((1, 2, 0)):
        grads_int[..., slot, j] += own

    batch = theta.shape[:-1]
    K = gap.shape[0]
    surv = np.exp(-lam * tau[-1])  # (..., 1)
    probs = np.concatenate([probs_int.reshape(batch + (3 * K,)), surv], axis=-1)
    gsurv = np.repeat((-tau[-1] * surv)[..., None], 3, axis=-1)  # (..., 1, 3)
    grads = np.concatenate([grads_int.reshape(batch + (3 * K, 3)), gsurv], axis=-2)
    return probs, grads


def cell_table(theta: Theta, grid: InspectionGrid) -> CellTable:
    """Cell probabilities of the interval-monitored MOBE model with analytic gradients."""
    probs, grads = cell_arrays(theta.as_array(), grid.as_array())
    probs.setflags(write=False)
    grads.setflags(write=False)
    return CellTable(probs, grads)


def cell_gradients(theta: Theta, grid: InspectionGrid) -> np.ndarray:
    """``(M, 3)`` matrix of ``d p_l / d lambda_j``; see also :attr:`CellTable.log_grads`."""
    return cell_table(theta, grid).grads


def _positive_times(*xs: float) -> None:
    for x in xs:
        if not (np.isfinite(x) and x > 0):
            raise DomainError(f"times must be positive and finite, got {x!r}")


def mobe_joint_density(theta: Theta, x1: float, x2: float) -> float:
    """Joint MOBE density.

    Off the diagonal this is an ordinary Lebesgue density; on ``x1 == x2`` the
    value ``lambda0 * exp(-lambda * x)`` is the density of the singular
    component along the diagonal.
    """
    _positive_times(x1, x2)
    l0, l1, l2 = theta
    if x1 < x2:
        return l1 * (l0 + l2) * np.exp(-l1 * x1 - (l0 + l2) * x2)
    if x2 < x1:
        return l2 * (l0 + l1) * np.exp(-(l0 + l1) * x1 - l2 * x2)
    return l0 * np.exp(-theta.total * x1)


def mobe_joint_survival(theta: Theta, x1: float, x2: float) -> float:
    """``P(X1 > x1, X2 > x2) = exp(-(lambda0 max(x1, x2) + lambda1 x1 + lambda2 x2))``."""
    _positive_times(x1, x2)
    l0, l1, l2 = theta
    return float(np.exp(-(l0 * max(x1, x2) + l1 * x1 + l2 * x2)))


@dataclass(frozen=True)
class BivariateObservation:
    """Latent failure times of one unit; either may exceed the horizon."""

    x1: float
    x2: float

    def __post_init__(self) -> None:
        for name in ("x1", "x2"):
            value = float(getattr(self, name))
            if np.isnan(value):
                raise ClassificationError(f"{name} is NaN")
            if value <= 0:
                raise DomainError(f"{name} must be positive, got {value!r}")
            object.__setattr__(self, name, value)


def classify_cells(x1, x2, times: Sequence[float]) -> np.ndarray:
    """Vectorised cell assignment of latent pairs ``(x1, x2)``.

    Ties ``x1 == x2`` use exact float equality; they arise from the common shock.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any(~np.isfinite(x1) & ~np.isposinf(x1)) or np.any(~np.isfinite(x2) & ~np.isposinf(x2)):
        raise ClassificationError("observations contain NaN")
    tau = np.asarray(times, dtype=float)
    K = tau.shape[0]
    first = np.minimum(x1, x2)
    slot = np.where(x1 < x2, 0, np.where(x2 < x1, 1, 2))
    interval = np.searchsorted(tau, first, side="left")  # tau[i-1] < t <= tau[i]
    return np.where(interval >= K, 3 * K, 3 * interval + slot)


def classify_cell(x: BivariateObservation, grid: InspectionGrid) -> int:
    """Flat 0-based index of the monitoring cell that contains ``x``."""
    return int(classify_cells(x.x1, x.x2, grid.times))
