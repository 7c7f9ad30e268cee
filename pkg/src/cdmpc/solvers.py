"""First-order solvers for block box-constrained QPs.

`pcdm_solve` runs the parallel coordinate descent method: every block takes
a prox step from the same snapshot,

    vbar^i = argmin_{v in U^i} <g_i, v - u^i> + (L_i/2) ||v - u^i||^2,

and the iterate advances by the safe convex combination

    u^i_{k+1} = (1/M) vbar^i + ((M-1)/M) u^i_k.

`projected_gradient_solve` is the one-block reduction (step 1/lambda_max(Q));
`jacobi_block_solve` replaces the prox step with exact block minimization
before the same averaging.  Rate certificates follow the sublinear
M/(M+k) and the linear (1 - 2*sigma1/(M*(1+sigma1)))^k envelopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockqp import BlockedQP, BlockPartition, BoxSet, sigma1 as _sigma1, weighted_norm1

__all__ = [
    "SolverConfig",
    "SolveReport",
    "coordinate_step",
    "pcdm_iterate",
    "pcdm_solve",
    "projected_gradient_solve",
    "jacobi_block_solve",
    "sublinear_bound",
    "linear_bound",
    "certificate_violations",
    "single_block_view",
    "InnerSolveError",
]

STOPPING_MODES = ("budget", "gap", "step")

# Inner solver constants for the exact-block baseline.
JACOBI_INNER_TOL = 1e-9
JACOBI_INNER_CAP_FACTOR = 10


class InnerSolveError(RuntimeError):
    """Raised when a block subproblem produces non-finite values."""

    def __init__(self, block: int, iteration: int):
        super().__init__(f"inner solve failed on block {block} at iteration {iteration}")
        self.block = block
        self.iteration = iteration


@dataclass
class SolverConfig:
    """Stopping rule and bookkeeping knobs.

    stopping_mode is one of:
      "budget" - run exactly max_iterations iterations (the default;
                 matches the fixed-budget suboptimal-MPC usage),
      "gap"    - stop once f(u_k) - reference_value <= tolerance,
      "step"   - stop once the L-weighted norm of u_{k+1} - u_k <= tolerance.

    worker_count models how many parallel workers share the block updates;
    the updates are data-parallel and evaluated vectorized, so the iterate
    sequence is bitwise identical for any worker_count.
    """

    max_iterations: int = 1000
    tolerance: float = 0.0
    stopping_mode: str = "budget"
    reference_value: float | None = None
    reference_point: np.ndarray | None = None
    record_history: bool = False
    worker_count: int = 1
    debug_feasibility: bool = False

    def __post_init__(self):
        if self.stopping_mode not in STOPPING_MODES:
            raise ValueError(f"stopping_mode must be one of {STOPPING_MODES}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")
        if self.stopping_mode == "gap" and self.reference_value is None:
            raise ValueError("gap stopping mode requires reference_value")
        if int(self.worker_count) < 1:
            raise ValueError("worker_count must be positive")


@dataclass
class SolveReport:
    algorithm: str
    final_iterate: np.ndarray
    iterations_used: int
    final_value: float
    stop_reason: str
    budget_exhausted: bool = False
    projected_initial: bool = False
    objective_history: np.ndarray | None = None
    gap_history: np.ndarray | None = None
    final_gap: float | None = None
    r0: float | None = None
    gap0: float | None = None
    sigma1: float | None = None
    bound_violations: int | None = None
    certificates: str = "unavailable"
    total_inner_iterations: int = 0

    def to_json(self) -> dict:
        doc = {
            "algorithm": self.algorithm,
            "iterations_used": self.iterations_used,
            "final_value": self.final_value,
            "stop_reason": self.stop_reason,
            "budget_exhausted": self.budget_exhausted,
            "projected_initial": self.projected_initial,
            "certificates": self.certificates,
            "u": self.final_iterate.tolist(),
        }
        for name in ("final_gap", "r0", "gap0", "sigma1", "bound_violations"):
            val = getattr(self, name)
            if val is not None:
                doc[name] = val
        if self.objective_history is not None:
            doc["objective_history"] = list(map(float, self.objective_history))
        if self.gap_history is not None:
            doc["gap_history"] = list(map(float, self.gap_history))
        if self.total_inner_iterations:
            doc["total_inner_iterations"] = self.total_inner_iterations
        return doc


# -- rate certificates ---------------------------------------------------

def sublinear_bound(k, M: int, r0: float, gap0: float):
    """Objective-gap envelope (M/(M+k)) * (r0^2/2 + gap0)."""
    if r0 < 0 or gap0 < 0:
        raise ValueError("r0 and gap0 must be nonnegative")
    k = np.asarray(k, dtype=float)
    out = (M / (M + k)) * (0.5 * r0 * r0 + gap0)
    return float(out) if out.ndim == 0 else out


def linear_bound(k, M: int, sigma1: float, r0: float, gap0: float):
    """Objective-gap envelope (1 - 2*sigma1/(M*(1+sigma1)))^k * (r0^2/2 + gap0)."""
    if not 0.0 < sigma1 <= 1.0:
        raise ValueError(f"sigma1 must lie in (0, 1], got {sigma1}")
    if r0 < 0 or gap0 < 0:
        raise ValueError("r0 and gap0 must be nonnegative")
    k = np.asarray(k, dtype=float)
    rho = 1.0 - 2.0 * sigma1 / (M * (1.0 + sigma1))
    out = rho ** k * (0.5 * r0 * r0 + gap0)
    return float(out) if out.ndim == 0 else out


def certificate_violations(M, objective_history, f_star, r0, sig1=None):
    """Count iterations whose gap exceeds the rate envelopes.

    A small floating-point slack (relative to f_star and the initial gap) is
    added before comparing, so cancellation noise at the convergence plateau
    is not reported as a violation.
    Returns (sublinear_violations, linear_violations).
    """
    fs = np.asarray(objective_history, dtype=float)
    gaps = fs - f_star
    gap0 = max(float(gaps[0]), 0.0)
    ks = np.arange(len(fs))
    slack = 1e-9 * (1.0 + abs(f_star) + gap0)
    sub = sublinear_bound(ks, M, r0, gap0)
    v_sub = int(np.sum(gaps > sub + slack))
    v_lin = 0
    if sig1 is not None and sig1 > 0.0:
        lin = linear_bound(ks, M, sig1, r0, gap0)
        v_lin = int(np.sum(gaps > lin + slack))
    return v_sub, v_lin


# -- single steps --------------------------------------------------------

def coordinate_step(oracle, u, i: int, box: BoxSet | None = None) -> np.ndarray:
    """Prox step of block i from the snapshot u.

    For a box this is the gradient step u^i - g_i/L_i followed by a clamp.
    """
    L = oracle.lipschitz(i)
    if L <= 0.0:
        raise ValueError(f"block {i} has nonpositive Lipschitz constant {L}")
    if box is None:
        box = oracle.boxes[i]
    g = oracle.partial_gradient(u, i)
    ui = np.asarray(u, dtype=float)[oracle.partition.slice(i)]
    return box.project(ui - g / L)


def pcdm_iterate(oracle, u: np.ndarray) -> np.ndarray:
    """One parallel coordinate descent iteration from the snapshot u.

    Every block's prox point is computed from the same u, then averaged in
    with weight 1/M; the result stays feasible (a final clamp guards the
    convex combination against rounding).
    """
    u = np.asarray(u, dtype=float)
    M = oracle.partition.block_count
    if isinstance(oracle, BlockedQP):
        if oracle.W:
            raise ValueError("bind the state first: the QP still has a W map")
        if not oracle.feasible(u):
            raise ValueError("iterate requires a feasible point")
        lo, hi = oracle.stacked_bounds
        inv_l = 1.0 / oracle.expanded_lipschitz
        g = oracle.dense_Q @ u + oracle.w
        v = np.clip(u - g * inv_l, lo, hi)
        return np.clip(u + (v - u) * (1.0 / M), lo, hi)
    vbar = np.empty_like(u)
    for i in range(M):
        vbar[oracle.partition.slice(i)] = coordinate_step(oracle, u, i)
    u_next = u + (vbar - u) * (1.0 / M)
    for i in range(M):
        sl = oracle.partition.slice(i)
        u_next[sl] = oracle.boxes[i].project(u_next[sl])
    return u_next


# -- full solves ----------------------------------------------------------

def _run_averaged_descent(qp: BlockedQP, u0, config: SolverConfig, algorithm: str,
                          block_step) -> SolveReport:
    """Shared driver: snapshot block steps, 1/M averaging, stopping rules.

    block_step(u, g, out) writes the stacked per-block points vbar(u) given
    the full gradient g = Qu + q; it returns the number of inner iterations
    spent (zero for closed-form steps).
    """
    if qp.W:
        raise ValueError("bind the state first: the QP still has a W map")
    n = qp.dim
    M = qp.partition.block_count
    lo, hi = qp.stacked_bounds
    Q, q = qp.dense_Q, qp.w
    inv_m = 1.0 / M

    u = np.clip(np.asarray(u0, dtype=float), lo, hi)
    if u.shape != (n,):
        raise ValueError(f"u0 has shape {np.shape(u0)}, expected ({n},)")
    projected = not np.array_equal(u, np.asarray(u0, dtype=float))
    u_init = u.copy()

    mode = config.stopping_mode
    need_f = mode == "gap" or config.record_history
    f_star = config.reference_value

    history = [] if config.record_history else None
    g = np.empty(n)
    v = np.empty(n)
    u_next = np.empty(n)
    inner_total = 0
    k = 0
    f_u = np.nan
    stop_reason = "budget"
    budget_exhausted = False

    while True:
        np.dot(Q, u, out=g)
        g += q
        if need_f:
            f_u = 0.5 * (u @ g + q @ u)
            if history is not None:
                history.append(f_u)
        if config.debug_feasibility:
            assert np.all(u >= lo) and np.all(u <= hi), "infeasible iterate"
        if mode == "gap" and f_u - f_star <= config.tolerance:
            stop_reason = "gap"
            break
        if k >= config.max_iterations:
            stop_reason = "budget"
            budget_exhausted = mode != "budget"
            break

        inner_total += block_step(u, g, v)
        np.subtract(v, u, out=u_next)
        u_next *= inv_m
        u_next += u
        np.clip(u_next, lo, hi, out=u_next)
        k += 1

        if mode == "step":
            d = u_next - u
            step_norm = float(np.sqrt(np.sum(qp.expanded_lipschitz * d * d)))
            u, u_next = u_next, u
            if step_norm <= config.tolerance:
                if need_f:
                    gf = Q @ u + q
                    f_u = 0.5 * (u @ gf + q @ u)
                    if history is not None:
                        history.append(f_u)
                stop_reason = "step"
                break
        else:
            u, u_next = u_next, u

    if not need_f or np.isnan(f_u):
        f_u = qp.value(u)

    report = SolveReport(
        algorithm=algorithm,
        final_iterate=u.copy(),
        iterations_used=k,
        final_value=float(f_u),
        stop_reason=stop_reason,
        budget_exhausted=budget_exhausted,
        projected_initial=projected,
        total_inner_iterations=inner_total,
    )
    if history is not None:
        report.objective_history = np.asarray(history)
    if f_star is not None:
        report.final_gap = float(f_u) - f_star
        if history is not None:
            report.gap_history = report.objective_history - f_star
    _attach_certificates(qp, report, config, u_init)
    return report


def _attach_certificates(qp: BlockedQP, report: SolveReport, config: SolverConfig,
                         u_init: np.ndarray):
    """Rate-certificate bookkeeping; needs f*, u* and a recorded history."""
    if (config.reference_value is None or config.reference_point is None
            or report.objective_history is None):
        report.certificates = "unavailable"
        return
    u_star = np.asarray(config.reference_point, dtype=float)
    report.certificates = "checked"
    report.gap0 = max(float(report.objective_history[0]) - config.reference_value, 0.0)
    report.sigma1 = _sigma1(qp)
    report.r0 = weighted_norm1(qp.partition, qp.L, u_init - u_star)
    v_sub, v_lin = certificate_violations(
        qp.partition.block_count, report.objective_history,
        config.reference_value, report.r0, report.sigma1)
    report.bound_violations = v_sub + v_lin


def pcdm_solve(oracle, u0, config: SolverConfig) -> SolveReport:
    """Run the parallel coordinate descent method until the stopping rule fires."""
    if isinstance(oracle, BlockedQP):
        inv_l = 1.0 / oracle.expanded_lipschitz
        lo, hi = oracle.stacked_bounds

        def block_step(u, g, out):
            np.multiply(g, inv_l, out=out)
            np.subtract(u, out, out=out)
            np.clip(out, lo, hi, out=out)
            return 0

        return _run_averaged_descent(oracle, u0, config, "pcdm", block_step)
    return _generic_solve(oracle, u0, config)


def projected_gradient_solve(qp: BlockedQP, u0, config: SolverConfig) -> SolveReport:
    """Full-vector projected gradient with step 1/lambda_max(Q).

    Identical to the coordinate method run on the same QP viewed as a single
    block, which is what this implementation literally does.
    """
    view = single_block_view(qp)
    inv_l = 1.0 / view.expanded_lipschitz
    lo, hi = view.stacked_bounds

    def block_step(u, g, out):
        np.multiply(g, inv_l, out=out)
        np.subtract(u, out, out=out)
        np.clip(out, lo, hi, out=out)
        return 0

    return _run_averaged_descent(view, u0, config, "pg", block_step)


def jacobi_block_solve(qp: BlockedQP, u0, config: SolverConfig) -> SolveReport:
    """Exact-block Gauss-Jacobi baseline with 1/M averaging.

    Each block solves its box QP exactly (projected gradient with step
    1/lambda_max(Q^{ii}) to a 1e-9 KKT residual, capped at 10 n_i steps),
    then the blocks are averaged exactly as in the coordinate method.
    """
    if qp.W:
        raise ValueError("bind the state first: the QP still has a W map")
    part = qp.partition
    M = part.block_count
    slices = [part.slice(i) for i in range(M)]
    diag = [np.ascontiguousarray(qp.dense_Q[sl, sl]) for sl in slices]
    inv_li = [1.0 / qp.L[i] for i in range(M)]
    lo_b = [qp.boxes[i].lower for i in range(M)]
    hi_b = [qp.boxes[i].upper for i in range(M)]
    caps = [JACOBI_INNER_CAP_FACTOR * part.block_sizes[i] for i in range(M)]
    outer = [0]

    def block_step(u, g, out):
        inner = 0
        for i in range(M):
            sl = slices[i]
            ui = u[sl]
            c = g[sl] - diag[i] @ ui
            v = ui.copy()
            for _ in range(caps[i]):
                gv = diag[i] @ v + c
                if not np.all(np.isfinite(gv)):
                    raise InnerSolveError(i, outer[0])
                if np.max(np.abs(v - np.clip(v - gv, lo_b[i], hi_b[i]))) <= JACOBI_INNER_TOL:
                    break
                v = np.clip(v - gv * inv_li[i], lo_b[i], hi_b[i])
                inner += 1
            out[sl] = v
        outer[0] += 1
        return inner

    return _run_averaged_descent(qp, u0, config, "jacobi", block_step)


def _generic_solve(oracle, u0, config: SolverConfig) -> SolveReport:
    """Reference path for non-QP oracles: repeated pcdm_iterate calls."""
    u = np.asarray(u0, dtype=float).copy()
    part = oracle.partition
    for i in range(part.block_count):
        sl = part.slice(i)
        u[sl] = oracle.boxes[i].project(u[sl])
    projected = not np.array_equal(u, np.asarray(u0, dtype=float))
    mode = config.stopping_mode
    history = [] if config.record_history else None
    k = 0
    stop_reason = "budget"
    budget_exhausted = False
    L = np.array([oracle.lipschitz(i) for i in range(part.block_count)])
    while True:
        f_u = oracle.value(u)
        if history is not None:
            history.append(f_u)
        if mode == "gap" and f_u - config.reference_value <= config.tolerance:
            stop_reason = "gap"
            break
        if k >= config.max_iterations:
            budget_exhausted = mode != "budget"
            break
        u_next = pcdm_iterate(oracle, u)
        k += 1
        if mode == "step" and weighted_norm1(part, L, u_next - u) <= config.tolerance:
            u = u_next
            if history is not None:
                history.append(oracle.value(u))
            stop_reason = "step"
            break
        u = u_next
    report = SolveReport(
        algorithm="pcdm",
        final_iterate=u,
        iterations_used=k,
        final_value=float(oracle.value(u)),
        stop_reason=stop_reason,
        budget_exhausted=budget_exhausted,
        projected_initial=projected,
    )
    if history is not None:
        report.objective_history = np.asarray(history)
    if config.reference_value is not None:
        report.final_gap = report.final_value - config.reference_value
    return report


def single_block_view(qp: BlockedQP) -> BlockedQP:
    """The same QP re-partitioned as one block (L = lambda_max(Q))."""
    if qp.W:
        raise ValueError("bind the state first")
    lo, hi = qp.stacked_bounds
    return BlockedQP(
        BlockPartition((qp.dim,)),
        {(0, 0): np.array(qp.dense_Q)},
        w=qp.w.copy(),
        boxes=[BoxSet(lo.copy(), hi.copy())],
    )
