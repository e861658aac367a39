"""Command-line interface: ``mobecr {estimate,test,power,gof,design,simulate}``."""

from __future__ import annotations

import argparse
import csv
import platform
import sys
import warnings
from dataclasses import dataclass
from importlib import metadata, resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import CostModel, GaConfig, nsga2_run, write_population_csv
from .errors import DomainError, MobeError
from .estimation import CountData, FitConfig, fit, fit_many
from .inference import bootstrap_bias, gof_bootstrap_pvalue, wald_test
from .model import CAUSE_SLOT, InspectionGrid, Theta, cell_label
from .simulation import (
    DEFAULT_BETAS,
    REFERENCE_SCENARIOS,
    SIMULATION_GRID,
    ScenarioConfig,
    run_bias_study,
    run_power_study,
    write_bias_csv,
    write_power_csv,
)

CENSORED_MARKERS = {"", "c", "censored", "s"}
EXAMPLE_DATA = "failure_times.csv"
EXAMPLE_GRID = (0.032, 0.12, 0.23)
EXAMPLE_INIT = (3.5, 1.5, 2.5)


# ---------------------------------------------------------------------------
# data ingestion


@dataclass(frozen=True)
class RawDataset:
    """``(time, cause)`` records; ``cause is None`` marks a unit censored at ``time``."""

    records: tuple[tuple[float, int | None], ...]
    time_divisor: float = 1.0

    def counts(self, grid: InspectionGrid) -> CountData:
        """Bin records by interval and cause; times beyond ``tau_K`` are survivors."""
        out = np.zeros(grid.n_cells)
        tau = grid.as_array()
        for time, cause in self.records:
            t = time / self.time_divisor
            if t > tau[-1]:
                out[-1] += 1
            elif cause is None:
                raise DomainError(f"unit censored at {t:g}, before the last inspection {tau[-1]:g}")
            else:
                i = int(np.searchsorted(tau, t, side="left"))
                out[3 * i + CAUSE_SLOT[cause]] += 1
        return CountData(out)


def read_raw(csv_path, time_divisor: float = 1.0) -> RawDataset:
    """Parse a ``time,cause`` CSV; errors name the offending line."""
    if not time_divisor > 0:
        raise DomainError("time divisor must be positive")
    records = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            warnings.warn(f"{csv_path} is empty; returning zero counts", UserWarning, stacklevel=2)
            return RawDataset((), time_divisor)
        if [h.strip().lower() for h in header] != ["time", "cause"]:
            raise DomainError(f"line 1: expected header 'time,cause', got {','.join(header)!r}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DomainError(f"line {line}: expected 2 fields, got {len(row)}")
            try:
                time = float(row[0])
            except ValueError:
                raise DomainError(f"line {line}: time {row[0]!r} is not a number") from None
            if not (np.isfinite(time) and time > 0):
                raise DomainError(f"line {line}: time must be positive, got {row[0]!r}")
            code = row[1].strip().lower()
            if code in CENSORED_MARKERS:
                cause = None
            elif code in {"0", "1", "2"}:
                cause = int(code)
            else:
                raise DomainError(f"line {line}: unknown cause code {row[1]!r} (expected 0, 1, 2 or c)")
            records.append((time, cause))
    if not records:
        warnings.warn(f"{csv_path} has no records; returning zero counts", UserWarning, stacklevel=2)
    return RawDataset(tuple(records), time_divisor)


def ingest(csv_path, grid: InspectionGrid, time_divisor: float = 1.0) -> CountData:
    return read_raw(csv_path, time_divisor).counts(grid)


def write_counts(data: CountData, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([cell_label(i, data.K) for i in range(data.counts.size)])
        w.writerow([repr(float(c)) for c in data.counts])
    return path


def read_counts(path) -> CountData:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2:
        raise DomainError(f"{path}: expected a header row and one row of counts")
    K = (len(rows[0]) - 1) // 3
    if rows[0] != [cell_label(i, K) for i in range(len(rows[0]))]:
        raise DomainError(f"{path}: unexpected header {rows[0]}")
    return CountData([float(c) for c in rows[1]])


def example_data_path() -> Path:
    return Path(str(resources.files("mobecr") / "data" / EXAMPLE_DATA))


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _theta(text: str) -> Theta:
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"theta needs three rates, got {text!r}")
    try:
        return Theta(*vals)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid(text: str) -> InspectionGrid:
    try:
        return InspectionGrid(_floats(text))
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", nargs="?", help="time,cause CSV (default: bundled example data)")
    p.add_argument("--counts", help="read cell counts written by this tool instead of raw records")
    p.add_argument("--grid", type=_grid, default=InspectionGrid(EXAMPLE_GRID), help="inspection times t1,t2,...")
    p.add_argument("--divisor", type=float, default=10.0, help="divide raw times by this value (default 10)")


def _add_fit(p: argparse.ArgumentParser) -> None:
    p.add_argument("--init", type=_theta, default=Theta(*EXAMPLE_INIT), help="starting rates l0,l1,l2")
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--max-iterations", type=int, default=1_000_000)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobecr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="MLE and MDPDE fits with optional bootstrap bias")
    _add_data(p), _add_fit(p), _common(p)
    p.add_argument("--beta", type=_floats, default=DEFAULT_BETAS, help="tuning parameters (0 = MLE)")
    p.add_argument("--bootstrap", "-B", type=int, default=1000, help="bias resamples (0 disables)")

    p = sub.add_parser("test", help="Wald test of a linear contrast")
    _add_data(p), _add_fit(p), _common(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--contrast", type=_floats, default=(0.0, 1.0, -1.0))

    p = sub.add_parser("power", help="approximate power of the Wald test")
    _common(p)
    p.add_argument("--theta", type=_theta, action="append", required=True, help="alternative l0,l1,l2 (repeatable)")
    p.add_argument("--grid", type=_grid, default=InspectionGrid(SIMULATION_GRID))
    p.add_argument("--n", type=float, default=20)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=_floats, default=(0.2, 0.4, 0.6, 0.8, 1.0))
    p.add_argument("--method", choices=("normal", "noncentral"), default="normal")

    p = sub.add_parser("gof", help="parametric-bootstrap goodness-of-fit test")
    _add_data(p), _add_fit(p), _common(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--bootstrap", "-B", type=int, default=10_000)

    p = sub.add_parser("design", help="NSGA-II search for inspection times")
    _common(p)
    p.add_argument("--theta", type=_theta, default=Theta(0.15, 0.02, 0.07))
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--costs", type=_floats, default=(10.0, 1.0, 2.0), help="C0,Cn,Cf")
    p.add_argument("--caps", type=_floats, default=(np.inf, np.inf, 70.0), help="C1,C2,tau-star")
    p.add_argument("--bounds", type=_floats, default=(0.0, 70.0), help="lower,upper")
    p.add_argument("--pop-size", type=int, default=50)
    p.add_argument("--generations", type=int, default=100)

    p = sub.add_parser("simulate", help="Monte Carlo bias study and power table")
    _common(p)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--theta", type=_theta, help="pure rates (overrides --scenario)")
    p.add_argument("--theta-contaminated", type=_theta)
    p.add_argument("--eps", type=float, default=0.10, help="contamination fraction")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--replications", type=int, default=1000)
    p.add_argument("--grid", type=_grid, default=InspectionGrid(SIMULATION_GRID))
    p.add_argument("--beta", type=_floats, default=DEFAULT_BETAS)
    return parser


# ---------------------------------------------------------------------------
# commands


def _load(args) -> CountData:
    if args.counts:
        data = read_counts(args.counts)
    else:
        data = ingest(args.data or example_data_path(), args.grid, args.divisor)
    if data.K != args.grid.K:
        raise DomainError(f"--grid: data has {data.K} intervals but the grid has {args.grid.K}")
    return data


def _fit_config(args) -> FitConfig:
    return FitConfig(args.learning_rate, args.threshold, args.max_iterations, args.init)


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def write_manifest(args, argv: Sequence[str], outputs: Sequence[Path]) -> Path:
    path = args.out / f"{args.command}_manifest.txt"
    lines = [f"command = {args.command}", f"argv = {' '.join(argv)}", f"seed = {args.seed}"]
    lines += [f"arg.{k} = {v!r}" for k, v in sorted(vars(args).items()) if k not in {"command", "func"}]
    lines += [f"version.{k} = {v}" for k, v in _versions().items()]
    lines += [f"output = {p}" for p in outputs]
    path.write_text("\n".join(lines) + "\n")
    return path


def cmd_estimate(args) -> list[Path]:
    data = _load(args)
    cfg = _fit_config(args)
    rows = []
    for beta in args.beta:
        res = fit(args.grid, data, beta, cfg)
        if args.bootstrap > 0:
            bias, used = bootstrap_bias(data, args.grid, beta, args.bootstrap, args.seed, cfg, fitted=res)
        else:
            bias, used = np.full(3, np.nan), 0
        rows.append([res.objective_kind, *res.theta_hat, *bias, used, res.objective_value, res.iterations, res.converged])
        print(f"{res.objective_kind:>16}: " + " ".join(f"{v:.6f}" for v in res.theta_hat)
              + ("" if not used else "  bias " + " ".join(f"{v:+.6f}" for v in bias)))
    header = ["estimator", "lambda0", "lambda1", "lambda2", "bias0", "bias1", "bias2",
              "bootstrap_used", "objective", "iterations", "converged"]
    return [_write_rows(args.out / "estimates.csv", header, rows)]


def cmd_test(args) -> list[Path]:
    data = _load(args)
    res = fit(args.grid, data, args.beta, _fit_config(args))
    rep = wald_test(res.theta_hat, args.grid, args.beta, data.counts.sum(), args.alpha, np.array(args.contrast))
    print(f"M_n = {rep.statistic:.6f}, critical value {rep.critical_value:.4f}, "
          f"p = {rep.p_value:.4f}, reject = {rep.reject}")
    header = ["beta", "statistic", "critical_value", "alpha", "p_value", "reject"]
    return [_write_rows(args.out / "wald.csv", header,
                        [[args.beta, rep.statistic, rep.critical_value, rep.alpha, rep.p_value, rep.reject]])]


def cmd_power(args) -> list[Path]:
    table = run_power_study(args.theta, args.grid, args.n, args.alpha, args.beta, args.method)
    for theta, row in zip(table.thetas, table.power):
        print(tuple(theta), " ".join(f"{v:.4f}" for v in row))
    return [write_power_csv(table, args.out / "power.csv")]


def cmd_gof(args) -> list[Path]:
    data = _load(args)
    rep = gof_bootstrap_pvalue(data, args.grid, args.beta, args.bootstrap, args.seed, _fit_config(args))
    print(f"S = {rep.statistic:.5f}, p = {rep.p_value:.4f} ({rep.bootstrap_count - rep.dropped} of {rep.bootstrap_count} resamples)")
    header = ["beta", "statistic", "p_value", "bootstrap", "dropped", "lambda0", "lambda1", "lambda2"]
    return [_write_rows(args.out / "gof.csv", header,
                        [[args.beta, rep.statistic, rep.p_value, rep.bootstrap_count, rep.dropped, *rep.theta_hat]])]


def cmd_design(args) -> list[Path]:
    if len(args.costs) != 3 or len(args.caps) != 3 or len(args.bounds) != 2:
        raise DomainError("--costs and --caps need three values, --bounds two")
    cost = CostModel(*args.costs, n=args.n, C1=args.caps[0], C2=args.caps[1], tau_star=args.caps[2])
    cfg = GaConfig(population_size=args.pop_size, generations=args.generations, tau_lower=args.bounds[0],
                   tau_upper=args.bounds[1], K=args.K, seed=args.seed)
    res = nsga2_run(args.theta, args.beta, cost, cfg)
    last = res.history[-1]
    print(f"initial front {len(res.initial_front)}, final front {last.front_size} ({last.unique_front_size} distinct)")
    hist = _write_rows(args.out / "design_history.csv", ["generation", "front_size", "unique_front_size", "hypervolume"],
                       [[h.generation, h.front_size, h.unique_front_size, h.hypervolume] for h in res.history])
    return [write_population_csv(res, args.out / "pareto.csv"), hist]


def cmd_simulate(args) -> list[Path]:
    pure, contaminated = REFERENCE_SCENARIOS[args.scenario - 1]
    if args.theta is not None:
        if args.theta_contaminated is None:
            raise DomainError("--theta-contaminated is required with --theta")
        pure, contaminated = args.theta, args.theta_contaminated
    cfg = ScenarioConfig(pure, contaminated, args.eps, args.n, args.grid, args.replications, tuple(args.beta), args.seed)
    report = run_bias_study(cfg)
    outs = [write_bias_csv(report, args.out / "bias.csv")]
    alts = [Theta(pure.lambda0, pure.lambda1, pure.lambda2 + d) for d in (0.5, 1.0, 2.0)]
    betas = [b for b in args.beta if b > 0] or [0.2]
    outs.append(write_power_csv(run_power_study(alts, args.grid, args.n, 0.05, betas), args.out / "power.csv"))
    return outs


COMMANDS = {
    "estimate": cmd_estimate,
    "test": cmd_test,
    "power": cmd_power,
    "gof": cmd_gof,
    "design": cmd_design,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args)
        write_manifest(args, argv, outputs)
    except (MobeError, ValueError, OSError) as exc:
        print(f"mobecr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
