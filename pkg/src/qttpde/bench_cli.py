"""Experiment harness and command-line interface.

Subcommands
-----------
``solve``      one boundary-layer model solve at a given width and level
``sweep``      grid of (width, level) cells, CSV and optional plot script
``rankstudy``  degree sweep of projected high-order solutions
``kappa``      cost-exponent regression from a sweep CSV

Every figure-style experiment is a single invocation; sweeps run their
cells on a bounded thread pool and merge records deterministically, so
two runs with the same configuration emit byte-identical CSVs apart from
the wall-time column.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fem_assembly import ProblemSpec, RhsSpec, model_energy_error
from .rank_lab import rank_study, write_rank_study_csv
from .solve_engine import SolverConfig, SolverError, solve_perturbed

__all__ = [
    "SweepConfig",
    "SweepRecord",
    "run_sweep",
    "adaptive_tol",
    "estimate_kappa",
    "emit_csv",
    "read_sweep_csv",
    "emit_plot_script",
    "main",
]

_CSV_COLUMNS = (
    "delta", "L", "eps_tol", "n_dof", "max_rank", "energy_error",
    "sweeps", "converged", "wall_time_ms",
)
_TOL_LADDER = tuple(10.0**-k for k in range(2, 13))
_MAX_LEVEL = 60
_MAX_WORKERS = 8


@dataclass(frozen=True)
class SweepConfig:
    """Grid of sweep cells: every width in ``deltas`` crossed with every
    level from ``L_min`` to ``L_max`` inclusive.

    ``eps_tol`` is either a solver tolerance or the string ``"adaptive"``,
    which picks the largest ladder tolerance per cell whose error stays
    within 10% of the 1e-12 reference.  ``repetitions`` re-runs each
    solve and keeps the fastest timing.
    """

    deltas: tuple[float, ...]
    L_min: int
    L_max: int
    eps_tol: float | str = 1e-10
    precondition: bool = True
    output: str | None = None
    repetitions: int = 1

    def __post_init__(self) -> None:
        if not self.deltas:
            raise ValueError("at least one delta is required")
        if any(not 0.0 < d < 1.0 for d in self.deltas):
            raise ValueError(f"deltas must lie in (0, 1), got {self.deltas}")
        if not 1 <= self.L_min <= self.L_max:
            raise ValueError(
                f"invalid level range {self.L_min}..{self.L_max}"
            )
        if self.L_max > _MAX_LEVEL:
            raise ValueError(
                f"L_max {self.L_max} exceeds the cap {_MAX_LEVEL}"
            )
        if isinstance(self.eps_tol, str):
            if self.eps_tol != "adaptive":
                raise ValueError(
                    f"eps_tol must be a float or 'adaptive', got "
                    f"{self.eps_tol!r}"
                )
            if not self.precondition:
                raise ValueError(
                    "adaptive tolerance calibrates against the "
                    "preconditioned reference; use a fixed eps_tol for "
                    "unpreconditioned sweeps"
                )
        else:
            SolverConfig(eps_tol=self.eps_tol)  # bounds check
        if self.repetitions < 1:
            raise ValueError(
                f"repetitions must be positive, got {self.repetitions}"
            )


@dataclass(frozen=True)
class SweepRecord:
    """Result of one (delta, L) cell of a sweep."""

    delta: float
    L: int
    eps_tol: float
    n_dof: int
    max_rank: int
    energy_error: float
    sweeps: int
    converged: bool
    wall_time_ms: float


def _layer_problem(delta: float, L: int) -> ProblemSpec:
    """The boundary-layer model: zero load, values 0 and 1 at the ends."""
    return ProblemSpec(
        delta=delta, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0,
        L=L, bc="dirichlet-dirichlet",
    )


def _solve_cell(
    delta: float, L: int, eps: float, precondition: bool, repetitions: int
) -> SweepRecord:
    problem = _layer_problem(delta, L)
    cfg = SolverConfig(eps_tol=eps)
    best_ms = math.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        u, report = solve_perturbed(problem, cfg, precondition=precondition)
        best_ms = min(best_ms, (time.perf_counter() - t0) * 1e3)
    error = model_energy_error(u, problem)
    return SweepRecord(
        delta=delta,
        L=L,
        eps_tol=eps,
        n_dof=report.n_dof,
        max_rank=report.rank_profile.max_rank,
        energy_error=error,
        sweeps=report.sweeps,
        converged=report.converged,
        wall_time_ms=best_ms,
    )


def adaptive_tol(delta: float, L: int, budget: int = 11) -> float:
    """Largest ladder tolerance whose error is at most 10% above the
    error of the 1e-12 reference run.

    Walks the decade ladder 1e-2 .. 1e-12 from the top; ``budget`` caps
    the total number of solves including the reference.  Raises
    ``SolverError`` if the reference run itself does not converge.
    """
    if budget < 2:
        raise ValueError(f"budget must allow at least two solves, got {budget}")
    reference = _solve_cell(delta, L, _TOL_LADDER[-1], True, 1)
    if not reference.converged:
        raise SolverError(
            f"reference solve at tolerance 1e-12 did not converge for "
            f"delta={delta}, L={L}"
        )
    ceiling = 1.1 * reference.energy_error
    solves = 1
    for tol in _TOL_LADDER[:-1]:
        if solves >= budget:
            break
        candidate = _solve_cell(delta, L, tol, True, 1)
        solves += 1
        if candidate.converged and candidate.energy_error <= ceiling:
            return tol
    return _TOL_LADDER[-1]


def run_sweep(cfg: SweepConfig) -> list[SweepRecord]:
    """Solve every cell of the grid and return records sorted by
    (delta, L).  Non-converged cells are recorded, never dropped."""
    cells = [(d, L) for d in cfg.deltas
             for L in range(cfg.L_min, cfg.L_max + 1)]

    def work(cell: tuple[float, int]) -> SweepRecord:
        delta, L = cell
        if cfg.eps_tol == "adaptive":
            eps = adaptive_tol(delta, L)
        else:
            eps = float(cfg.eps_tol)
        return _solve_cell(delta, L, eps, cfg.precondition, cfg.repetitions)

    workers = min(len(cells), os.cpu_count() or 1, _MAX_WORKERS)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(work, cells))
    records.sort(key=lambda r: (r.delta, r.L))
    if cfg.output is not None:
        emit_csv(records, cfg.output)
    return records


def estimate_kappa(records) -> tuple[float, float, float]:
    """Cost-exponent regression: least squares of log10|log2 error|
    against log10 n_dof over the informative records.

    Keeps converged records with error in (0, 1) that sit above the
    rounding plateau (error more than 3x the cell tolerance); requires
    at least 5 such records spanning a decade of n_dof.  Returns
    (exponent, base coefficient, r_squared).
    """
    kept = [
        r for r in records
        if r.converged
        and 0.0 < r.energy_error < 1.0
        and r.energy_error > 3.0 * r.eps_tol
    ]
    if len(kept) < 5:
        raise ValueError(
            f"need at least 5 informative records, have {len(kept)}"
        )
    x = np.log10([r.n_dof for r in kept])
    y = np.log10([abs(math.log2(r.energy_error)) for r in kept])
    if x.max() - x.min() < 1.0:
        raise ValueError(
            "records span less than one decade of n_dof "
            f"({10**x.min():.0f} .. {10**x.max():.0f})"
        )
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    total = float(np.sum((y - y.mean()) ** 2))
    residual = float(np.sum((y - predicted) ** 2))
    r_squared = 1.0 - residual / total if total > 0.0 else 1.0
    return float(slope), float(10.0**intercept), r_squared


def emit_csv(records, path: str | os.PathLike) -> None:
    """Write records in the fixed sweep schema with round-trippable
    decimal formatting."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_CSV_COLUMNS)
        for r in records:
            writer.writerow([
                repr(r.delta), r.L, repr(r.eps_tol), r.n_dof, r.max_rank,
                repr(r.energy_error), r.sweeps,
                "true" if r.converged else "false", repr(r.wall_time_ms),
            ])


def read_sweep_csv(path: str | os.PathLike) -> list[SweepRecord]:
    """Parse a CSV produced by :func:`emit_csv`."""
    records = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(_CSV_COLUMNS):
            raise ValueError(
                f"unexpected CSV columns {reader.fieldnames}; expected "
                f"{list(_CSV_COLUMNS)}"
            )
        for row in reader:
            records.append(SweepRecord(
                delta=float(row["delta"]),
                L=int(row["L"]),
                eps_tol=float(row["eps_tol"]),
                n_dof=int(row["n_dof"]),
                max_rank=int(row["max_rank"]),
                energy_error=float(row["energy_error"]),
                sweeps=int(row["sweeps"]),
                converged=row["converged"] == "true",
                wall_time_ms=float(row["wall_time_ms"]),
            ))
    return records


def emit_plot_script(records, path: str | os.PathLike) -> None:
    """Write a self-contained gnuplot script with the sweep data inline:
    error against level, and against the square and cube roots of the
    parameter count."""
    deltas = sorted({r.delta for r in records})
    lines = [
        "# Sweep plots: run with `gnuplot <this file>`.",
        "set terminal pngcairo size 900,600",
        "set logscale y",
        "set key left bottom",
    ]
    for i, d in enumerate(deltas):
        lines.append(f"$sweep_{i} << EOD")
        lines.append("# L n_dof energy_error")
        for r in sorted(records, key=lambda r: r.L):
            if r.delta == d:
                lines.append(f"{r.L} {r.n_dof} {repr(r.energy_error)}")
        lines.append("EOD")

    stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]

    def plot_block(suffix: str, xlabel: str, xexpr: str) -> None:
        lines.append(f"set output '{stem}_{suffix}.png'")
        lines.append(f"set xlabel '{xlabel}'")
        lines.append("set ylabel 'energy error'")
        parts = [
            f"$sweep_{i} using {xexpr}:3 with linespoints "
            f"title 'delta={deltas[i]:g}'"
            for i in range(len(deltas))
        ]
        lines.append("plot " + ", \\\n     ".join(parts))

    plot_block("error_vs_level", "level", "1")
    plot_block("error_vs_sqrt_dof", "n_dof^(1/2)", "(sqrt($2))")
    plot_block("error_vs_cbrt_dof", "n_dof^(1/3)", "($2**(1.0/3.0))")
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")


def _parse_levels(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition(":")
    if not sep:
        value = int(lo)
        return value, value
    return int(lo), int(hi)


def _parse_deltas(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part)


def _parse_tol(text: str) -> float | str:
    return "adaptive" if text == "adaptive" else float(text)


def _print_records(records) -> None:
    print("delta        L  eps_tol   n_dof  max_rank  energy_error  "
          "sweeps  converged")
    for r in records:
        print(f"{r.delta:<10g} {r.L:>3}  {r.eps_tol:<8.1e} {r.n_dof:>6}  "
              f"{r.max_rank:>8}  {r.energy_error:<12.4e}  {r.sweeps:>6}  "
              f"{str(r.converged).lower()}")


def _cmd_solve(args: argparse.Namespace) -> int:
    record = _solve_cell(
        args.delta, args.level, float(args.tol),
        args.precond == "on", 1,
    )
    _print_records([record])
    if args.csv:
        emit_csv([record], args.csv)
    return 0 if record.converged or args.allow_partial else 1


def _cmd_sweep(args: argparse.Namespace) -> int:
    lo, hi = _parse_levels(args.levels)
    cfg = SweepConfig(
        deltas=_parse_deltas(args.deltas),
        L_min=lo,
        L_max=hi,
        eps_tol=_parse_tol(args.tol),
        precondition=args.precond == "on",
        output=args.csv,
        repetitions=args.reps,
    )
    records = run_sweep(cfg)
    _print_records(records)
    if args.plot:
        emit_plot_script(records, args.plot)
    all_converged = all(r.converged for r in records)
    return 0 if all_converged or args.allow_partial else 1


def _cmd_rankstudy(args: argparse.Namespace) -> int:
    lo, hi = _parse_levels(args.p)
    records = rank_study(
        range(lo, hi + 1), delta=args.delta, L=args.level, eps=args.eps
    )
    print("p  max_rank  n_parameters  hp_energy_error")
    for r in records:
        print(f"{r.p:<2} {r.max_rank:>8}  {r.n_parameters:>12}  "
              f"{r.hp_energy_error:.4e}")
    if args.csv:
        write_rank_study_csv(records, args.csv)
    return 0


def _cmd_kappa(args: argparse.Namespace) -> int:
    records = read_sweep_csv(args.input)
    kappa, base, r_squared = estimate_kappa(records)
    print(f"kappa={kappa:.4f} b={base:.4f} r_squared={r_squared:.4f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qttpde",
        description="Quantized solver experiments for the 1D "
        "reaction-diffusion boundary-layer model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="one (delta, level) solve")
    p_solve.add_argument("--delta", type=float, required=True)
    p_solve.add_argument("--level", type=int, required=True)
    p_solve.add_argument("--tol", type=float, default=1e-10)
    p_solve.add_argument("--precond", choices=("on", "off"), default="on")
    p_solve.add_argument("--csv", default=None)
    p_solve.add_argument("--allow-partial", action="store_true")
    p_solve.set_defaults(func=_cmd_solve)

    p_sweep = sub.add_parser("sweep", help="(delta, level) grid sweep")
    p_sweep.add_argument("--deltas", required=True,
                         help="comma-separated widths, e.g. 1e-1,1e-3")
    p_sweep.add_argument("--levels", required=True,
                         help="inclusive range A:B")
    p_sweep.add_argument("--tol", default="1e-10",
                         help="solver tolerance or 'adaptive'")
    p_sweep.add_argument("--precond", choices=("on", "off"), default="on")
    p_sweep.add_argument("--csv", default=None)
    p_sweep.add_argument("--plot", default=None,
                         help="write a gnuplot script here")
    p_sweep.add_argument("--reps", type=int, default=1)
    p_sweep.add_argument("--allow-partial", action="store_true")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_rank = sub.add_parser("rankstudy", help="degree sweep of projected "
                            "high-order solutions")
    p_rank.add_argument("--p", required=True, help="degree range A:B")
    p_rank.add_argument("--delta", type=float, default=1e-4)
    p_rank.add_argument("--level", type=int, default=14)
    p_rank.add_argument("--eps", type=float, default=1e-10)
    p_rank.add_argument("--csv", default=None)
    p_rank.set_defaults(func=_cmd_rankstudy)

    p_kappa = sub.add_parser("kappa", help="cost-exponent regression "
                             "from a sweep CSV")
    p_kappa.add_argument("--input", required=True)
    p_kappa.set_defaults(func=_cmd_kappa)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
