"""Suboptimal MPC: warm-started coordinate descent under a fixed per-step
iteration budget, with terminal-feedback appending and Lyapunov monitoring.

Each step rebinds the cached condensed QP to the measured state (only the
linear term depends on it), runs exactly `budget` solver iterations from the
shifted previous solution, and applies the first input.  The shifted warm
start appends kappa^i = F^i x^i at the predicted terminal state, projected
onto the input boxes if it violates them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .activeset import active_set_solve
from .blockqp import BoxSet
from .network import Condensation, MPCConfig, NetworkSystem, condense, simulate_linear
from .solvers import SolverConfig, jacobi_block_solve, pcdm_solve, projected_gradient_solve
from .terminal import TerminalCandidate, verify_global

__all__ = [
    "ControllerState",
    "StepRecord",
    "ClosedLoopTrace",
    "MPCController",
    "warm_start_shift",
    "closed_loop",
]

LYAPUNOV_TOL = 1e-8

_SOLVERS = {
    "pcdm": pcdm_solve,
    "pg": projected_gradient_solve,
    "jacobi": jacobi_block_solve,
}


def warm_start_shift(u_prev: np.ndarray, feedback, x_terminal, boxes):
    """Shift the horizon by one step and append the terminal feedback.

    u_prev is the (N, m) time-major trajectory of the previous step;
    the appended input is kappa^i = F^i x_terminal^i per subsystem, clamped
    to the boxes when it violates them.  Returns (shifted, projected_flag).
    """
    u_prev = np.asarray(u_prev, dtype=float)
    if u_prev.ndim != 2 or u_prev.shape[0] < 1:
        raise ValueError("warm start needs at least one input row")
    x_terminal = np.asarray(x_terminal, dtype=float)
    kappa = []
    xoff = 0
    for F in feedback:
        F = np.asarray(F, dtype=float)
        kappa.append(F @ x_terminal[xoff:xoff + F.shape[1]])
        xoff += F.shape[1]
    kappa = np.concatenate(kappa)
    shifted = np.vstack([u_prev[1:], kappa])
    projected = False
    uoff = 0
    for box in boxes:
        seg = shifted[-1, uoff:uoff + box.dim]
        clamped = box.project(seg)
        if not np.array_equal(clamped, seg):
            projected = True
            shifted[-1, uoff:uoff + box.dim] = clamped
        uoff += box.dim
    return shifted, projected


@dataclass
class ControllerState:
    warm_start: np.ndarray  # (N, m) time-major input trajectory
    feedback: tuple  # terminal feedback blocks F^i
    iteration_budget: int

    def __post_init__(self):
        if self.iteration_budget < 0:
            raise ValueError("iteration budget must be nonnegative")


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    u: np.ndarray
    v_n: float
    iterations: int
    feasible: bool
    lyapunov_ok: bool
    warm_start_projected: bool
    stage_cost: float


@dataclass
class ClosedLoopTrace:
    records: list[StepRecord] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def sum_vn(self) -> float:
        return float(sum(r.v_n for r in self.records))

    @property
    def all_feasible(self) -> bool:
        return all(r.feasible for r in self.records)

    def states(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    def inputs(self) -> np.ndarray:
        return np.array([r.u for r in self.records])

    def to_csv(self, path) -> None:
        n = self.records[0].x.size if self.records else 0
        m = self.records[0].u.size if self.records else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"x{i}" for i in range(n)]
                            + [f"u{i}" for i in range(m)]
                            + ["V_N", "iters", "feasible", "lyapunov_ok"])
            for r in self.records:
                writer.writerow([r.step] + [repr(v) for v in r.x]
                                + [repr(v) for v in r.u]
                                + [repr(r.v_n), r.iterations,
                                   int(r.feasible), int(r.lyapunov_ok)])


class MPCController:
    """Receding-horizon controller around a cached condensation.

    algo is one of "pcdm", "pg", "jacobi" (fixed iteration budget) or
    "optimal" (active-set solve of each step's QP, used as the benchmark
    reference).  A terminal candidate supplies the appended feedback; it is
    verified unless waive_terminal is set.  Without a candidate the shifted
    warm start is padded with zero inputs (a waived, zero-feedback choice).
    """

    def __init__(self, sys: NetworkSystem, cfg: MPCConfig, budget: int,
                 candidate: TerminalCandidate | None = None, algo: str = "pcdm",
                 waive_terminal: bool = False, worker_count: int = 1):
        if algo not in ("optimal", *_SOLVERS):
            raise ValueError(f"unknown algorithm {algo!r}")
        cfg.validate_against(sys)
        self.sys = sys
        self.cfg = cfg
        self.algo = algo
        self.worker_count = worker_count
        self.condensation: Condensation = condense(sys, cfg)
        if candidate is not None:
            if not waive_terminal and not verify_global(sys, cfg, candidate).passed:
                raise ValueError("terminal candidate failed verification; "
                                 "pass waive_terminal=True to run anyway")
            feedback = candidate.F
        else:
            feedback = tuple(np.zeros((sys.input_sizes[i], sys.state_sizes[i]))
                             for i in range(sys.subsystem_count))
        warm = self._project_trajectory(np.zeros((cfg.horizon, sys.input_dim)))
        self.state = ControllerState(warm_start=warm, feedback=feedback,
                                     iteration_budget=int(budget))
        self._step_index = 0
        self._prev_u_opt: np.ndarray | None = None

    def _project_trajectory(self, traj: np.ndarray) -> np.ndarray:
        out = traj.copy()
        for i, box in enumerate(self.cfg.input_boxes):
            sl = self.sys.input_slice(i)
            out[:, sl] = np.clip(out[:, sl], box.lower, box.upper)
        return out

    def _solve(self, bound, u0_dec):
        if self.algo == "optimal":
            lo, hi = bound.stacked_bounds
            res = active_set_solve(bound.dense_Q, bound.w, lo, hi, x0=u0_dec)
            return res.x, res.iterations
        solver = _SOLVERS[self.algo]
        config = SolverConfig(max_iterations=self.state.iteration_budget,
                              stopping_mode="budget",
                              worker_count=self.worker_count)
        report = solver(bound, u0_dec, config)
        return report.final_iterate, report.iterations_used

    def value_at(self, x, trajectory) -> float:
        """V_N(x, u) through the cached condensation."""
        bound = self.condensation.qp.bind(x)
        u_dec = self.condensation.to_decision(trajectory)
        return bound.value(u_dec) + self.condensation.constant.value(x)

    def step(self, x) -> tuple[np.ndarray, StepRecord]:
        """One MPC step at the measured state; returns (applied input, record)."""
        x = np.asarray(x, dtype=float)
        cond = self.condensation
        bound = cond.qp.bind(x)

        warm = self._project_trajectory(self.state.warm_start)
        warm_projected = not np.array_equal(warm, self.state.warm_start)
        u0_dec = cond.to_decision(warm)
        if self.state.iteration_budget == 0 and self.algo != "optimal":
            u_dec, iters = u0_dec, 0
        else:
            u_dec, iters = self._solve(bound, u0_dec)

        feasible = bound.feasible(u_dec)
        assert feasible, "solver returned an infeasible trajectory"
        v_n = bound.value(u_dec) + cond.constant.value(x)
        traj = cond.to_trajectory(u_dec)
        u_applied = traj[0].copy()
        stage = self.cfg.stage_cost(self.sys, x, u_applied)

        rollout = simulate_linear(self.sys, x, traj)
        x_next = rollout.states[1]
        shifted, shift_projected = warm_start_shift(
            traj, self.state.feedback, rollout.states[-1], self.cfg.input_boxes)

        v_next_warm = self.value_at(x_next, shifted)
        lyap_ok = bool(v_next_warm <= v_n - stage + LYAPUNOV_TOL * (1.0 + abs(v_n)))

        record = StepRecord(
            step=self._step_index, x=x.copy(), u=u_applied, v_n=float(v_n),
            iterations=iters, feasible=feasible, lyapunov_ok=lyap_ok,
            warm_start_projected=warm_projected or shift_projected,
            stage_cost=float(stage),
        )
        self.state.warm_start = shifted
        self._step_index += 1
        return u_applied, record


def closed_loop(controller: MPCController, x0, steps: int) -> ClosedLoopTrace:
    """Run the controller against its own linear model for `steps` steps."""
    x = np.asarray(x0, dtype=float).copy()
    trace = ClosedLoopTrace()
    for _ in range(steps):
        u, record = controller.step(x)
        trace.records.append(record)
        x = simulate_linear(controller.sys, x, u[None, :]).states[1]
    return trace
