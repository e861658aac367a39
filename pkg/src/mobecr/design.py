"""NSGA-II search for inspection grids.

Two objectives are minimised over grids ``(tau_1, ..., tau_K)``:

* ``phi1``: expected experiment cost ``C0 + Cn n + Cf E(n - N_s)``;
* ``phi2``: ``det(J^-1 K J^-1)``, the generalised variance of the MDPDE.

Grids are evolved unsorted. Disorder is penalised through the inversion count
used by the tournament, and objectives are always evaluated on the sorted grid.
Population-level functions work on plain arrays (``objectives`` of shape
``(N, 2)``); :class:`ParetoIndividual` is the record type handed to callers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .asymptotics import sandwich_from_arrays
from .errors import DomainError, SingularityError
from .model import Theta, cell_arrays


@dataclass(frozen=True)
class CostModel:
    C0: float = 10.0
    Cn: float = 1.0
    Cf: float = 2.0
    n: int = 20
    C1: float = math.inf
    C2: float = math.inf
    tau_star: float = 70.0

    def __post_init__(self) -> None:
        for name in ("C0", "Cn", "Cf"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be non-negative")
        for name in ("C1", "C2", "tau_star"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.n < 1:
            raise DomainError("n must be at least 1")


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    generations: int = 100
    crossover_prob: float = 0.9
    crossover_index: float = 20.0
    mutation_prob: float | None = None  # None means 1/K
    mutation_index: float = 20.0
    tau_lower: float = 0.0
    tau_upper: float = 70.0
    K: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 2 or self.population_size % 2:
            raise DomainError("population_size must be even and at least 2")
        if self.generations < 0:
            raise DomainError("generations must be non-negative")
        if not 0 <= self.crossover_prob <= 1:
            raise DomainError("crossover_prob must lie in [0, 1]")
        if self.mutation_prob is not None and not 0 <= self.mutation_prob <= 1:
            raise DomainError("mutation_prob must lie in [0, 1]")
        if not (self.crossover_index > 0 and self.mutation_index > 0):
            raise DomainError("distribution indices must be positive")
        if not self.tau_lower < self.tau_upper:
            raise DomainError("tau_lower must be below tau_upper")
        if self.K < 1:
            raise DomainError("K must be at least 1")

    @property
    def p_mutation(self) -> float:
        return 1.0 / self.K if self.mutation_prob is None else self.mutation_prob


@dataclass(frozen=True)
class ParetoIndividual:
    grid: tuple[float, ...]
    phi1: float
    phi2: float
    violation: int
    rank: int
    crowding: float
    feasible: bool

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.phi1, self.phi2)


# ---------------------------------------------------------------------------
# objectives


def phi1_cost(grid: Sequence[float], theta: Theta, cost: CostModel) -> float:
    """``C0 + Cn n + Cf n (1 - exp(-lambda tau_K))`` with ``tau_K`` the largest time."""
    tau_k = max(float(t) for t in grid)
    failures = cost.n * -math.expm1(-theta.total * tau_k)
    return cost.C0 + cost.Cn * cost.n + cost.Cf * failures


def phi2_precision(grid: Sequence[float], theta: Theta, beta: float) -> float:
    """Determinant of the sandwich covariance; ``inf`` when ``J`` is singular.

    The grid may be unsorted or contain repeated times; it is sorted first and
    repeated times simply produce empty cells.
    """
    times = np.sort(np.asarray(grid, dtype=float))
    if times[0] < 0:
        raise DomainError("inspection times must be non-negative")
    probs, grads = cell_arrays(theta.as_array(), times)
    try:
        Sigma = sandwich_from_arrays(probs, grads, beta).Sigma
    except SingularityError:
        return math.inf
    value = float(np.linalg.det(Sigma))
    return value if value > 0 else math.inf


def violation_score(grid: Sequence[float]) -> int:
    """Number of pairs ``j < i`` with ``tau_i < tau_j``."""
    t = np.asarray(grid, dtype=float)
    return int(np.sum(np.triu(t[:, None] > t[None, :], k=1)))


def cap_violations(grid: Sequence[float], phi1: float, phi2: float, cost: CostModel) -> int:
    return int(phi1 >= cost.C1) + int(phi2 >= cost.C2) + int(max(grid) >= cost.tau_star)


# ---------------------------------------------------------------------------
# dominance machinery


def _objs(x) -> np.ndarray:
    if isinstance(x, ParetoIndividual):
        return np.array(x.objectives)
    return np.asarray(x, dtype=float)


def dominates(a, b) -> bool:
    """Pareto dominance for minimisation; ``a`` and ``b`` are individuals or objective pairs."""
    a, b = _objs(a), _objs(b)
    return bool(np.all(a <= b) and np.any(a < b))


def _domination_matrix(F: np.ndarray) -> np.ndarray:
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt  # [i, j]: i dominates j


def nondominated_sort(objectives) -> np.ndarray:
    """Non-domination ranks (1 = Pareto front) by repeated peeling."""
    F = np.asarray([_objs(x) for x in objectives]) if not isinstance(objectives, np.ndarray) else objectives
    dom = _domination_matrix(F)
    n = F.shape[0]
    ranks = np.zeros(n, dtype=int)
    remaining = np.ones(n, dtype=bool)
    level = 0
    while remaining.any():
        level += 1
        dominated = (dom & remaining[:, None]).any(axis=0)
        front = remaining & ~dominated
        ranks[front] = level
        remaining &= ~front
    return ranks


def crowding_distance(objectives) -> np.ndarray:
    """Crowding distance of every member of one front.

    Boundary members get ``inf``; an objective with zero span contributes 0.
    Spans are taken over finite values so singular designs (``phi2 = inf``)
    do not erase the density information of the rest of the front.
    """
    F = np.asarray([_objs(x) for x in objectives]) if not isinstance(objectives, np.ndarray) else objectives
    n = F.shape[0]
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for j in range(F.shape[1]):
        order = np.argsort(F[:, j], kind="stable")
        v = F[order, j]
        dist[order[0]] = dist[order[-1]] = np.inf
        finite = v[np.isfinite(v)]
        span = finite.max() - finite.min() if finite.size else 0.0
        if span <= 0:
            continue
        # inf - inf between two singular designs is no gap at all
        with np.errstate(invalid="ignore"):
            gap = v[2:] - v[:-2]
        dist[order[1:-1]] += np.where(np.isnan(gap), 0.0, gap) / span
    return dist


def crowded_compare(rank_a: int, crowd_a: float, rank_b: int, crowd_b: float) -> bool:
    """True when ``a`` is preferred to ``b`` (ties prefer ``a``)."""
    if rank_a != rank_b:
        return rank_a < rank_b
    return not crowd_b > crowd_a


def binary_tournament(a: int, b: int, ranks, crowding, violation) -> int:
    """Index of the winner between population members ``a`` and ``b``."""
    fa, fb = violation[a] == 0, violation[b] == 0
    if fa and fb:
        return a if crowded_compare(ranks[a], crowding[a], ranks[b], crowding[b]) else b
    if fa != fb:
        return a if fa else b
    return a if violation[a] <= violation[b] else b


# ---------------------------------------------------------------------------
# variation operators


def sbx_spread(r, eta_c: float):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(r <= 0.5, (2 * r) ** (1 / (eta_c + 1)), (1 / (2 * (1 - r))) ** (1 / (eta_c + 1)))


def sbx_crossover(p1, p2, config: GaConfig, rng: np.random.Generator, clamp: bool = True):
    """Variable-wise simulated binary crossover of two parent grids."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if rng.random() >= config.crossover_prob:
        return p1.copy(), p2.copy()
    b = sbx_spread(rng.random(p1.shape), config.crossover_index)
    c1 = 0.5 * ((1 + b) * p1 + (1 - b) * p2)
    c2 = 0.5 * ((1 - b) * p1 + (1 + b) * p2)
    if clamp:
        c1 = np.clip(c1, config.tau_lower, config.tau_upper)
        c2 = np.clip(c2, config.tau_lower, config.tau_upper)
    return c1, c2


def mutation_shift(r, delta, eta_m: float):
    """``delta_q`` of polynomial mutation for uniform draw ``r`` and boundary distance ``delta``."""
    r = np.asarray(r, dtype=float)
    a = (1 - delta) ** (eta_m + 1)
    lo = (2 * r + (1 - 2 * r) * a) ** (1 / (eta_m + 1)) - 1
    hi = 1 - (2 * (1 - r) + 2 * (r - 0.5) * a) ** (1 / (eta_m + 1))
    return np.where(r <= 0.5, lo, hi)


def polynomial_mutation(grid, config: GaConfig, rng: np.random.Generator) -> np.ndarray:
    t = np.array(grid, dtype=float)
    width = config.tau_upper - config.tau_lower
    for i in range(t.size):
        if rng.random() < config.p_mutation:
            delta = min(config.tau_upper - t[i], t[i] - config.tau_lower) / width
            t[i] += float(mutation_shift(rng.random(), delta, config.mutation_index)) * width
    return np.clip(t, config.tau_lower, config.tau_upper)


# ---------------------------------------------------------------------------
# hypervolume


def hypervolume_2d(objectives, reference) -> float:
    """Area dominated by a set of points and bounded by ``reference`` (minimisation)."""
    F = np.asarray(objectives, dtype=float).reshape(-1, 2)
    ref = np.asarray(reference, dtype=float)
    F = F[np.all(F < ref, axis=1)]
    if F.size == 0:
        return 0.0
    F = F[np.lexsort((F[:, 1], F[:, 0]))]
    area = 0.0
    best2 = ref[1]
    for f1, f2 in F:
        if f2 < best2:
            area += (ref[0] - f1) * (best2 - f2)
            best2 = f2
    return float(area)


# ---------------------------------------------------------------------------
# main loop


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    front_size: int
    unique_front_size: int
    hypervolume: float


@dataclass(frozen=True)
class DesignResult:
    population: list[ParetoIndividual]
    history: list[GenerationStats]
    reference: tuple[float, float]
    initial_front: list[ParetoIndividual] = field(repr=False)

    @property
    def front(self) -> list[ParetoIndividual]:
        return [ind for ind in self.population if ind.rank == 1]

    @property
    def unique_front(self) -> list[ParetoIndividual]:
        seen, out = set(), []
        for ind in self.front:
            if ind.grid not in seen:
                seen.add(ind.grid)
                out.append(ind)
        return out


class _Evaluator:
    def __init__(self, theta: Theta, beta: float, cost: CostModel):
        self.theta, self.beta, self.cost = theta, beta, cost

    def __call__(self, grids: np.ndarray):
        phi = np.array([[phi1_cost(g, self.theta, self.cost), phi2_precision(g, self.theta, self.beta)] for g in grids])
        viol = np.array(
            [violation_score(g) + cap_violations(g, f1, f2, self.cost) for g, (f1, f2) in zip(grids, phi)], dtype=int
        )
        return phi, viol


def _rank_and_crowd(phi: np.ndarray):
    ranks = nondominated_sort(phi)
    crowd = np.zeros(len(phi))
    for r in np.unique(ranks):
        members = np.flatnonzero(ranks == r)
        crowd[members] = crowding_distance(phi[members])
    return ranks, crowd


def _individuals(grids, phi, viol, ranks, crowd) -> list[ParetoIndividual]:
    return [
        ParetoIndividual(tuple(float(t) for t in g), float(f[0]), float(f[1]), int(v), int(r), float(c), bool(v == 0))
        for g, f, v, r, c in zip(grids, phi, viol, ranks, crowd)
    ]


def _stats(gen, grids, phi, ranks, ref) -> GenerationStats:
    front = ranks == 1
    unique = len({tuple(g) for g in grids[front]})
    return GenerationStats(gen, int(front.sum()), unique, hypervolume_2d(phi[front], ref))


def _stream(seed: int, generation: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, generation, kind, index])


def nsga2_run(
    theta: Theta,
    beta: float,
    cost: CostModel = CostModel(),
    config: GaConfig = GaConfig(),
    reference: tuple[float, float] | None = None,
) -> DesignResult:
    """Run NSGA-II and return the final population with per-generation statistics.

    The hypervolume reference defaults to ``(C0 + n (Cn + Cf), 1.1 * max
    finite phi2 of the initial population)`` and stays fixed for the run.
    """
    N, K = config.population_size, config.K
    evaluate = _Evaluator(theta, beta, cost)
    grids = _stream(config.seed, 0, 0).uniform(config.tau_lower, config.tau_upper, size=(N, K))
    phi, viol = evaluate(grids)
    ranks, crowd = _rank_and_crowd(phi)
    if reference is None:
        finite = phi[np.isfinite(phi[:, 1]), 1]
        reference = (cost.C0 + cost.n * (cost.Cn + cost.Cf), 1.1 * float(finite.max()) if finite.size else 1.0)
    initial_front = [ind for ind in _individuals(grids, phi, viol, ranks, crowd) if ind.rank == 1]
    history = [_stats(0, grids, phi, ranks, reference)]

    for gen in range(1, config.generations + 1):
        sel = _stream(config.seed, gen, 1)
        parents = np.empty(N, dtype=int)
        for k in range(N):
            a, b = sel.choice(N, size=2, replace=False)
            parents[k] = binary_tournament(a, b, ranks, crowd, viol)
        children = np.empty_like(grids)
        for k in range(0, N, 2):
            c1, c2 = sbx_crossover(grids[parents[k]], grids[parents[k + 1]], config, _stream(config.seed, gen, 2, k))
            children[k] = polynomial_mutation(c1, config, _stream(config.seed, gen, 3, k))
            children[k + 1] = polynomial_mutation(c2, config, _stream(config.seed, gen, 3, k + 1))
        cphi, cviol = evaluate(children)

        R = np.concatenate([grids, children])
        Rphi = np.concatenate([phi, cphi])
        Rviol = np.concatenate([viol, cviol])
        Rranks, Rcrowd = _rank_and_crowd(Rphi)
        chosen: list[int] = []
        for r in range(1, Rranks.max() + 1):
            members = np.flatnonzero(Rranks == r)
            if len(chosen) + members.size <= N:
                chosen.extend(members.tolist())
                if len(chosen) == N:
                    break
                continue
            order = sorted(members.tolist(), key=lambda i: -Rcrowd[i])  # stable: ties keep index order
            chosen.extend(order[: N - len(chosen)])
            break
        idx = np.array(chosen)
        grids, phi, viol = R[idx], Rphi[idx], Rviol[idx]
        ranks, crowd = _rank_and_crowd(phi)
        history.append(_stats(gen, grids, phi, ranks, reference))

    population = _individuals(grids, phi, viol, ranks, crowd)
    return DesignResult(population, history, tuple(reference), initial_front)


def write_population_csv(result: DesignResult, path) -> Path:
    """Rows ``tau_1..tau_K, phi1, phi2, rank, crowding, feasible`` for plotting."""
    path = Path(path)
    K = len(result.population[0].grid)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"tau_{i + 1}" for i in range(K)] + ["phi1", "phi2", "rank", "crowding", "feasible"])
        for ind in result.population:
            w.writerow([repr(t) for t in ind.grid] + [repr(ind.phi1), repr(ind.phi2), ind.rank, ind.crowding, int(ind.feasible)])
    return path
