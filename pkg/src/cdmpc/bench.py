"""Benchmark harnesses: quadruple-tank closed-loop budget sweeps and
one-shot solver runs on random ring networks.

The quadtank benchmark compares the fixed-budget controller's accumulated
cost sum_t V_N(x_t, u) over a closed loop against the same loop driven by
exact per-step solves (active-set reference), reporting the percentage
performance loss.  The random benchmark solves condensed QPs from random
initial states to a fixed objective gap and logs iteration counts per
algorithm.  Rows serialize to CSV and JSON with a stable schema.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .activeset import active_set_solve
from .controller import MPCController, closed_loop
from .network import condense
from .quadtank import QuadTankParams, quadtank_system, STATE_PERMUTATION
from .randomnet import RandomNetSpec, random_network
from .solvers import SolverConfig, jacobi_block_solve, pcdm_solve, projected_gradient_solve
from .terminal import SynthesisFailure, synth_fallback

__all__ = ["BenchRow", "bench_quadtank", "bench_random", "run_benchmark",
           "rows_to_csv", "rows_to_json", "median_loss_by_budget"]

CSV_FIELDS = [
    "kind", "algo", "run", "budget", "tolerance", "horizon", "steps",
    "iterations", "inner_iterations", "final_gap", "sum_vn", "sum_vn_opt",
    "perf_loss_pct", "status",
]

_SOLVERS = {
    "pcdm": pcdm_solve,
    "pg": projected_gradient_solve,
    "jacobi": jacobi_block_solve,
}


@dataclass
class BenchRow:
    kind: str
    algo: str
    run: int
    budget: int | None = None
    tolerance: float | None = None
    horizon: int | None = None
    steps: int | None = None
    iterations: int | None = None
    inner_iterations: int | None = None
    final_gap: float | None = None
    sum_vn: float | None = None
    sum_vn_opt: float | None = None
    perf_loss_pct: float | None = None
    status: str = "ok"


def rows_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(row).items()})


def rows_to_json(rows, path) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in rows], fh, indent=1)


def _quadtank_initial_states(runs: int, seed: int, deviation: float) -> np.ndarray:
    """Random level deviations up to `deviation` of the operating levels."""
    p = QuadTankParams()
    rng = np.random.default_rng(seed)
    levels = np.array(p.levels0)[list(STATE_PERMUTATION)]
    return rng.uniform(-1.0, 1.0, size=(runs, 4)) * deviation * levels


def bench_quadtank(budgets, horizon: int = 20, steps: int = 50, runs: int = 10,
                   seed: int = 0, deviation: float = 0.2,
                   algo: str = "pcdm") -> list[BenchRow]:
    """Closed-loop budget sweep against the exact-solve reference loop."""
    sys, cfg = quadtank_system(horizon=horizon)
    try:
        candidate = synth_fallback(sys, cfg)
    except SynthesisFailure:
        candidate = None  # run with zero terminal feedback; cost keeps Riccati P
    x0s = _quadtank_initial_states(runs, seed, deviation)

    rows = []
    opt_cost = []
    for run in range(runs):
        ref = MPCController(sys, cfg, budget=0, candidate=candidate, algo="optimal")
        trace = closed_loop(ref, x0s[run], steps)
        opt_cost.append(trace.sum_vn)
        rows.append(BenchRow(kind="quadtank", algo="optimal", run=run, budget=None,
                             horizon=horizon, steps=steps,
                             sum_vn=trace.sum_vn, sum_vn_opt=trace.sum_vn,
                             perf_loss_pct=0.0))
    for budget in budgets:
        for run in range(runs):
            ctrl = MPCController(sys, cfg, budget=int(budget), candidate=candidate,
                                 algo=algo)
            trace = closed_loop(ctrl, x0s[run], steps)
            loss = 100.0 * (trace.sum_vn - opt_cost[run]) / opt_cost[run]
            rows.append(BenchRow(kind="quadtank", algo=algo, run=run,
                                 budget=int(budget), horizon=horizon, steps=steps,
                                 iterations=int(budget) * steps,
                                 sum_vn=trace.sum_vn, sum_vn_opt=opt_cost[run],
                                 perf_loss_pct=loss))
    return rows


def median_loss_by_budget(rows) -> dict[int, float]:
    by_budget: dict[int, list[float]] = {}
    for r in rows:
        if r.budget is not None and r.perf_loss_pct is not None:
            by_budget.setdefault(r.budget, []).append(r.perf_loss_pct)
    return {b: float(np.median(v)) for b, v in sorted(by_budget.items())}


def bench_random(subsystems: int = 8, input_size: int = 5, state_size: int | None = None,
                 horizon: int = 12, seeds=range(10), tolerance: float = 1e-3,
                 algos=("pcdm", "jacobi", "pg"), max_iterations: int = 200_000,
                 x0_scale: float = 1.0) -> list[BenchRow]:
    """One-shot condensed-QP solves to a fixed gap, per seed and algorithm."""
    rows = []
    for seed in seeds:
        spec = RandomNetSpec(subsystem_count=subsystems, input_size=input_size,
                             state_size=input_size if state_size is None else state_size,
                             horizon=horizon, seed=int(seed))
        sys, cfg = random_network(spec)
        cond = condense(sys, cfg)
        rng = np.random.default_rng(int(seed) + 10_000)
        x0 = x0_scale * rng.normal(size=sys.state_dim)
        bound = cond.qp.bind(x0)
        lo, hi = bound.stacked_bounds
        ref = active_set_solve(bound.dense_Q, bound.w, lo, hi)
        if not ref.optimal:
            for algo in algos:
                rows.append(BenchRow(kind="random", algo=algo, run=int(seed),
                                     tolerance=tolerance, horizon=horizon,
                                     status="reference-failed"))
            continue
        u0 = bound.project(np.zeros(bound.dim))
        for algo in algos:
            config = SolverConfig(max_iterations=max_iterations, tolerance=tolerance,
                                  stopping_mode="gap", reference_value=ref.value)
            report = _SOLVERS[algo](bound, u0, config)
            rows.append(BenchRow(
                kind="random", algo=algo, run=int(seed), tolerance=tolerance,
                horizon=horizon, iterations=report.iterations_used,
                inner_iterations=report.total_inner_iterations or None,
                final_gap=report.final_gap,
                status="ok" if not report.budget_exhausted else "budget-exhausted"))
    return rows


def run_benchmark(kind: str, **kwargs) -> list[BenchRow]:
    if kind == "quadtank":
        return bench_quadtank(**kwargs)
    if kind == "random":
        return bench_random(**kwargs)
    raise ValueError(f"unknown benchmark kind {kind!r}")
