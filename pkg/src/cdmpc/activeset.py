"""Primal active-set solver for box-constrained QPs.

Reference oracle used by tests and benchmarks to obtain (f*, u*) for the
gap-based stopping rule and the rate certificates.  Coordinates clamped at
a bound form the working set; the free block is solved by a reduced Newton
system, bounds hit along the way are added, and clamped coordinates with a
wrong-sign multiplier are dropped.  Runs to a 1e-10 KKT residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = ["ActiveSetResult", "active_set_solve", "kkt_residual"]

KKT_TOL = 1e-10


@dataclass
class ActiveSetResult:
    x: np.ndarray
    value: float
    iterations: int
    kkt_residual: float
    status: str  # "optimal" or "max_iter"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def kkt_residual(Q, q, lo, hi, x) -> float:
    """Natural residual ||x - clip(x - (Qx + q), lo, hi)||_inf."""
    g = Q @ x + q
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi))))


def _solve_spd(A, b):
    try:
        return cho_solve(cho_factor(A), b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


def active_set_solve(Q, q, lo, hi, x0=None, max_iter: int | None = None,
                     kkt_tol: float = KKT_TOL) -> ActiveSetResult:
    """Minimize 0.5 x'Qx + q'x subject to lo <= x <= hi.

    Q must be symmetric positive definite on every free subspace met along
    the way (strong convexity of the benchmark instances guarantees this).
    x0, when given, warm-starts both the point and the working set.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = q.shape[0]
    if max_iter is None:
        max_iter = 5 * n + 100

    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    # working[i]: -1 clamped at lower, +1 clamped at upper, 0 free
    working = np.zeros(n, dtype=np.int8)
    working[x <= lo] = -1
    working[x >= hi] = 1

    scale = 1.0 + float(np.max(np.abs(q))) + float(np.max(np.abs(Q)))
    drop_tol = 1e-13 * scale

    iterations = 0
    for iterations in range(1, max_iter + 1):
        free = np.flatnonzero(working == 0)
        if free.size:
            rhs = -(q[free] + Q[np.ix_(free, np.flatnonzero(working != 0))]
                    @ x[working != 0])
            target = _solve_spd(Q[np.ix_(free, free)], rhs)
            p = target - x[free]
        else:
            p = np.zeros(0)

        if p.size == 0 or np.max(np.abs(p)) <= 1e-14 * (1.0 + np.max(np.abs(x))):
            # stationary on the free block; check multipliers at the bounds
            g = Q @ x + q
            viol_lo = np.where(working == -1, -g, -np.inf)
            viol_hi = np.where(working == 1, g, -np.inf)
            worst = max(viol_lo.max(initial=-np.inf), viol_hi.max(initial=-np.inf))
            if worst <= drop_tol:
                break
            if viol_lo.max(initial=-np.inf) >= viol_hi.max(initial=-np.inf):
                working[int(np.argmax(viol_lo))] = 0
            else:
                working[int(np.argmax(viol_hi))] = 0
            continue

        # longest step along p that stays inside the box
        alpha = 1.0
        blockers: list[tuple[int, int]] = []
        for idx, pj in zip(free, p):
            if pj > 0 and np.isfinite(hi[idx]):
                a = (hi[idx] - x[idx]) / pj
                side = 1
            elif pj < 0 and np.isfinite(lo[idx]):
                a = (lo[idx] - x[idx]) / pj
                side = -1
            else:
                continue
            if a < alpha - 1e-15:
                alpha = max(a, 0.0)
                blockers = [(idx, side)]
            elif abs(a - alpha) <= 1e-15:
                blockers.append((idx, side))
        x[free] += alpha * p
        if alpha < 1.0:
            for idx, side in blockers:
                x[idx] = hi[idx] if side == 1 else lo[idx]
                working[idx] = side

    # polish the free block (iterative refinement of the reduced system)
    for _ in range(3):
        free = np.flatnonzero(working == 0)
        if not free.size:
            break
        g = Q @ x + q
        if np.max(np.abs(g[free]), initial=0.0) <= 1e-15 * scale:
            break
        x[free] -= _solve_spd(Q[np.ix_(free, free)], g[free])

    res = kkt_residual(Q, q, lo, hi, x)
    status = "optimal" if res <= kkt_tol else "max_iter"
    value = float(0.5 * x @ Q @ x + q @ x)
    return ActiveSetResult(x=x, value=value, iterations=iterations,
                           kkt_residual=res, status=status)
