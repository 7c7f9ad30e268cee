"""Distributed terminal-cost machinery for stabilizing MPC without an
end-point constraint.

A candidate is a per-subsystem triple (P^i, F^i, W^{N_i}): quadratic
terminal weight, terminal feedback u^i = F^i x^i, and a neighborhood slack
matrix.  Each subsystem's matrix inequality

    (A^{N_i} + B^{N_i} F^{N_i})' P^i (A^{N_i} + B^{N_i} F^{N_i})
        - Sel_i' (P^i + Q^i + F^i' R^i F^i) Sel_i  <=  W^{N_i}

is checked by eigenvalue tests; the slacks may be indefinite as long as
their assembled sum is negative semidefinite, which together with the local
inequalities yields the global Lyapunov decrease.  Synthesizing an optimal
candidate is a semidefinite program; this module exports it in SDPA sparse
format for an external solver and provides a Riccati-based fallback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_are, solve_triangular

from .network import MPCConfig, NetworkSystem

__all__ = [
    "TerminalCandidate",
    "LocalMIReport",
    "GlobalCertificate",
    "StabilityRegion",
    "LMIExport",
    "SynthesisFailure",
    "neighborhood_order",
    "verify_local_mi",
    "verify_global",
    "synth_fallback",
    "estimate_region",
    "export_sdpa",
    "parse_sdpa",
    "candidate_from_lmi_solution",
]

# lambda_max <= VERIFY_TOL * (1 + ||assembled||_2) counts as satisfied
VERIFY_TOL = 1e-8

FALLBACK_MAX_DOUBLINGS = 20


class SynthesisFailure(RuntimeError):
    """No scaled Riccati candidate passed the global verification."""


@dataclass
class TerminalCandidate:
    """Per-subsystem terminal weights P^i, feedbacks F^i and slacks W^{N_i}.

    W_blocks[i] is ordered like neighborhood_order(sys, i): subsystem i
    first, then its remaining in-neighbors sorted.
    """

    P: tuple
    F: tuple
    W_blocks: dict

    def __post_init__(self):
        self.P = tuple(np.asarray(p, dtype=float) for p in self.P)
        self.F = tuple(np.asarray(f, dtype=float) for f in self.F)
        self.W_blocks = {int(i): np.asarray(w, dtype=float) for i, w in self.W_blocks.items()}
        for i, p in enumerate(self.P):
            if not np.allclose(p, p.T, atol=1e-10 * (1.0 + np.abs(p).max()), rtol=0.0):
                raise ValueError(f"P[{i}] must be symmetric")

    def feedback_blockdiag(self, sys: NetworkSystem) -> np.ndarray:
        F = np.zeros((sys.input_dim, sys.state_dim))
        for i in range(sys.subsystem_count):
            F[sys.input_slice(i), sys.state_slice(i)] = self.F[i]
        return F

    def terminal_blockdiag(self, sys: NetworkSystem) -> np.ndarray:
        P = np.zeros((sys.state_dim, sys.state_dim))
        for i in range(sys.subsystem_count):
            P[sys.state_slice(i), sys.state_slice(i)] = self.P[i]
        return P

    def to_json(self) -> dict:
        return {
            "P": [p.tolist() for p in self.P],
            "F": [f.tolist() for f in self.F],
            "W": {str(i): w.tolist() for i, w in sorted(self.W_blocks.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TerminalCandidate":
        return cls(
            P=tuple(np.asarray(p, dtype=float) for p in doc["P"]),
            F=tuple(np.asarray(f, dtype=float) for f in doc["F"]),
            W_blocks={int(i): np.asarray(w, dtype=float) for i, w in doc.get("W", {}).items()},
        )


def neighborhood_order(sys: NetworkSystem, i: int) -> tuple[int, ...]:
    """Subsystem i first, then its remaining in-neighbors sorted."""
    nbrs = set(sys.neighbors(i))
    nbrs.discard(i)
    return (i,) + tuple(sorted(nbrs))


def _neighborhood_selectors(sys: NetworkSystem, i: int):
    """A^{N_i} and B^{N_i} in the order of neighborhood_order."""
    order = neighborhood_order(sys, i)
    scols = np.concatenate([np.arange(sys.state_slice(j).start, sys.state_slice(j).stop)
                            for j in order])
    icols = np.concatenate([np.arange(sys.input_slice(j).start, sys.input_slice(j).stop)
                            for j in order])
    rows = np.arange(sys.state_slice(i).start, sys.state_slice(i).stop)
    return order, sys.dense_A[np.ix_(rows, scols)], sys.dense_B[np.ix_(rows, icols)]


def _neighborhood_feedback(sys: NetworkSystem, cand: TerminalCandidate,
                           order: tuple[int, ...]) -> np.ndarray:
    m_ni = sum(sys.input_sizes[j] for j in order)
    n_ni = sum(sys.state_sizes[j] for j in order)
    F_ni = np.zeros((m_ni, n_ni))
    roff = coff = 0
    for j in order:
        F_ni[roff:roff + sys.input_sizes[j], coff:coff + sys.state_sizes[j]] = cand.F[j]
        roff += sys.input_sizes[j]
        coff += sys.state_sizes[j]
    return F_ni


def _local_mi_lhs(sys: NetworkSystem, cfg: MPCConfig, cand: TerminalCandidate, i: int):
    # terminal decrease plus stage cost along u^i = F^i x^i:
    #   C' P^i C - Sel'(P^i - Q^i - F^i' R^i F^i) Sel  <=  W^{N_i}
    # so that summing over i gives the global Lyapunov matrix exactly.
    order, A_ni, B_ni = _neighborhood_selectors(sys, i)
    F_ni = _neighborhood_feedback(sys, cand, order)
    C = A_ni + B_ni @ F_ni
    lhs = C.T @ cand.P[i] @ C
    mid = cand.P[i] - cfg.state_weights[i] - cand.F[i].T @ cfg.input_weights[i] @ cand.F[i]
    n_i = sys.state_sizes[i]
    lhs[:n_i, :n_i] -= mid
    return order, 0.5 * (lhs + lhs.T)


@dataclass
class LocalMIReport:
    subsystem: int
    lambda_max: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.lambda_max <= self.tolerance


def verify_local_mi(sys: NetworkSystem, cfg: MPCConfig, cand: TerminalCandidate,
                    i: int) -> LocalMIReport:
    """Eigenvalue check of subsystem i's matrix inequality against W^{N_i}."""
    order, lhs = _local_mi_lhs(sys, cfg, cand, i)
    w = cand.W_blocks.get(i)
    n_ni = lhs.shape[0]
    if w is None:
        w = np.zeros((n_ni, n_ni))
    if w.shape != lhs.shape:
        raise ValueError(f"W block {i} has shape {w.shape}, expected {lhs.shape} "
                         f"(neighborhood order {order})")
    violation = lhs - 0.5 * (w + w.T)
    eigs = np.linalg.eigvalsh(violation)
    norm = max(abs(eigs[0]), abs(eigs[-1]))
    return LocalMIReport(subsystem=i, lambda_max=float(eigs[-1]),
                         tolerance=VERIFY_TOL * (1.0 + norm))


def assemble_slack(sys: NetworkSystem, cand: TerminalCandidate) -> np.ndarray:
    """Global W from the neighborhood contributions: q(x) = x'Wx."""
    n = sys.state_dim
    W = np.zeros((n, n))
    for i, w in cand.W_blocks.items():
        order = neighborhood_order(sys, i)
        cols = np.concatenate([np.arange(sys.state_slice(j).start, sys.state_slice(j).stop)
                               for j in order])
        W[np.ix_(cols, cols)] += 0.5 * (w + w.T)
    return W


@dataclass
class GlobalCertificate:
    passed: bool
    slack_lambda_max: float
    slack_tolerance: float
    lyapunov_lambda_max: float
    lyapunov_tolerance: float


def verify_global(sys: NetworkSystem, cfg: MPCConfig, cand: TerminalCandidate) -> GlobalCertificate:
    """Assembled slack W <= 0 and the direct closed-loop Lyapunov decrease.

    Both tests must pass: the first certifies that the local slacks sum to a
    nonpositive quadratic, the second checks
    (A+BF)'P(A+BF) - P + Q + F'RF <= 0 with block-diagonal P, F directly.
    """
    W = assemble_slack(sys, cand)
    ew = np.linalg.eigvalsh(W)
    w_norm = max(abs(ew[0]), abs(ew[-1]), 0.0)
    w_tol = VERIFY_TOL * (1.0 + w_norm)

    F = cand.feedback_blockdiag(sys)
    P = cand.terminal_blockdiag(sys)
    C = sys.dense_A + sys.dense_B @ F
    Qbar = np.zeros_like(P)
    Rterm = np.zeros_like(P)
    for i in range(sys.subsystem_count):
        sl = sys.state_slice(i)
        Qbar[sl, sl] = cfg.state_weights[i]
        Rterm[sl, sl] = cand.F[i].T @ cfg.input_weights[i] @ cand.F[i]
    D = C.T @ P @ C - P + Qbar + Rterm
    D = 0.5 * (D + D.T)
    ed = np.linalg.eigvalsh(D)
    d_norm = max(abs(ed[0]), abs(ed[-1]))
    d_tol = VERIFY_TOL * (1.0 + d_norm)

    return GlobalCertificate(
        passed=bool(ew[-1] <= w_tol and ed[-1] <= d_tol),
        slack_lambda_max=float(ew[-1]),
        slack_tolerance=w_tol,
        lyapunov_lambda_max=float(ed[-1]),
        lyapunov_tolerance=d_tol,
    )


def local_riccati(sys: NetworkSystem, cfg: MPCConfig, i: int):
    """Terminal weight and feedback from the subsystem's own (A^{ii}, B^{ii})."""
    n_i, m_i = sys.state_sizes[i], sys.input_sizes[i]
    A = sys.A_blocks.get((i, i), np.zeros((n_i, n_i)))
    B = sys.B_blocks.get((i, i), np.zeros((n_i, m_i)))
    Q, R = cfg.state_weights[i], cfg.input_weights[i]
    P = solve_discrete_are(A, B, Q, R)
    F = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return 0.5 * (P + P.T), F


def synth_fallback(sys: NetworkSystem, cfg: MPCConfig) -> TerminalCandidate:
    """Riccati feedbacks plus geometric scaling of the local weights.

    F^i solves each subsystem's own LQR problem; the weights beta * Phat^i
    are scaled up (doubling, at most 2^20) until the global verification
    passes.  The slacks are the exact local residuals, so every local
    inequality holds with equality and the assembled slack coincides with
    the global Lyapunov matrix.  Raises SynthesisFailure when no scaling
    works; the caller must then supply an externally synthesized candidate.
    """
    base = [local_riccati(sys, cfg, i) for i in range(sys.subsystem_count)]
    F = tuple(f for _, f in base)
    beta = 1.0
    for _ in range(FALLBACK_MAX_DOUBLINGS + 1):
        P = tuple(beta * p for p, _ in base)
        cand = TerminalCandidate(P=P, F=F, W_blocks={})
        W_blocks = {i: _local_mi_lhs(sys, cfg, cand, i)[1]
                    for i in range(sys.subsystem_count)}
        cand = TerminalCandidate(P=P, F=F, W_blocks=W_blocks)
        if verify_global(sys, cfg, cand).passed:
            return cand
        beta *= 2.0
    raise SynthesisFailure(
        f"no scaling up to 2^{FALLBACK_MAX_DOUBLINGS} of the local Riccati "
        "weights passes the global verification")


@dataclass
class StabilityRegion:
    """Sampled terminal level alpha and stage-cost floor d (not a proof)."""

    alpha: float
    d: float
    method: str = "sampling"
    samples: int = 0

    def __post_init__(self):
        if not (self.alpha > 0 and self.d > 0):
            raise ValueError("alpha and d must be positive")


def estimate_region(sys: NetworkSystem, cfg: MPCConfig, cand: TerminalCandidate,
                    n_samples: int = 100_000, seed: int = 0) -> StabilityRegion | None:
    """Sampling estimate of the invariant level set and the cost floor.

    alpha is the largest power of two such that n_samples points on the level
    set {x : x'Px = alpha} keep the feedback inside the input boxes and map
    back into the set; d is the smallest sampled stage cost just outside.
    Returns None when no level passes (region empty).
    """
    rng = np.random.default_rng(seed)
    n = sys.state_dim
    P = cand.terminal_blockdiag(sys)
    F = cand.feedback_blockdiag(sys)
    C = sys.dense_A + sys.dense_B @ F
    L = np.linalg.cholesky(0.5 * (P + P.T))

    dirs = rng.normal(size=(n_samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # rows x with x' P x = 1
    X1 = solve_triangular(L.T, dirs.T, lower=False).T

    # both defining conditions scale exactly with alpha, so test once at the
    # unit level and search the grid on the box condition only
    XN1 = X1 @ C.T
    back_in = np.einsum("ij,jk,ik->i", XN1, P, XN1)
    if np.max(back_in) > 1.0 + 1e-12:
        return None

    FX1 = X1 @ F.T
    lo = np.concatenate([b.lower for b in cfg.input_boxes])
    hi = np.concatenate([b.upper for b in cfg.input_boxes])
    with np.errstate(divide="ignore", invalid="ignore"):
        s_hi = np.where(FX1 > 0, hi / FX1, np.inf)
        s_lo = np.where(FX1 < 0, lo / FX1, np.inf)
    sqrt_alpha_max = float(np.min([s_hi.min(initial=np.inf), s_lo.min(initial=np.inf)]))
    if not sqrt_alpha_max > 0:
        return None
    alpha_cap = sqrt_alpha_max ** 2 if np.isfinite(sqrt_alpha_max) else 2.0 ** 60

    grid = 2.0 ** np.arange(-60, 61)
    feasible = grid[grid <= alpha_cap]
    if feasible.size == 0:
        return None
    alpha = float(feasible[-1])

    Qbar = np.zeros((n, n))
    for i in range(sys.subsystem_count):
        sl = sys.state_slice(i)
        Qbar[sl, sl] = cfg.state_weights[i]
        Qbar[sl, sl] += cand.F[i].T @ cfg.input_weights[i] @ cand.F[i]
    stage1 = np.einsum("ij,jk,ik->i", X1, Qbar, X1)
    # points strictly outside the level set: scale the boundary samples out
    d = float(alpha * (1.0 + 1e-6) * np.min(stage1))
    if d <= 0:
        return None
    return StabilityRegion(alpha=alpha, d=d, samples=n_samples)


# -- SDPA sparse export ---------------------------------------------------

def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass
class VariableInfo:
    name: str
    shape: tuple[int, ...]
    first_index: int  # 1-based start in the SDP variable vector; 0 if aliased
    count: int
    alias: str | None = None


@dataclass
class LMIExport:
    """Min-delta SDP whose feasibility certifies the terminal conditions.

    Constraints: one LMI block per subsystem plus the block delta*I - Wt >= 0
    on the assembled slack.  The shared-feedback equalities (each neighbor
    copy of Y^j equals Y^j itself) are enforced by aliasing the copies to the
    same scalar variables, so they hold identically in the export.
    """

    mdim: int
    block_sizes: tuple[int, ...]
    c: np.ndarray
    entries: dict  # (matno, blkno, row, col) -> value; 1-based, row <= col
    variables: tuple[VariableInfo, ...]

    def dumps(self) -> str:
        lines = ["* terminal-cost synthesis SDP (min delta)",
                 "* variables:"]
        for v in self.variables:
            if v.alias:
                lines.append(f"*   {v.name} -> aliased to {v.alias}")
            else:
                lines.append(f"*   {v.name} shape={'x'.join(map(str, v.shape))} "
                             f"indices {v.first_index}..{v.first_index + v.count - 1}")
        lines.append(str(self.mdim))
        lines.append(str(len(self.block_sizes)))
        lines.append(" ".join(str(s) for s in self.block_sizes))
        lines.append(" ".join(repr(float(x)) for x in self.c))
        for (matno, blk, r, c), val in sorted(self.entries.items()):
            lines.append(f"{matno} {blk} {r} {c} {val!r}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def parse_sdpa(text: str):
    """Read back an SDPA sparse problem: (mdim, block_sizes, c, entries)."""
    lines = [ln for ln in text.splitlines()
             if ln.strip() and not ln.lstrip().startswith(("*", '"'))]
    mdim = int(lines[0].split()[0])
    nblock = int(lines[1].split()[0])
    sizes = tuple(int(tok) for tok in
                  lines[2].replace(",", " ").replace("{", " ").replace("}", " ").split())
    if len(sizes) != nblock:
        raise ValueError(f"expected {nblock} block sizes, got {len(sizes)}")
    c = np.array([float(tok) for tok in lines[3].replace(",", " ").split()])
    if c.shape != (mdim,):
        raise ValueError(f"objective vector has {c.shape[0]} entries, expected {mdim}")
    entries = {}
    for ln in lines[4:]:
        toks = ln.split()
        key = (int(toks[0]), int(toks[1]), int(toks[2]), int(toks[3]))
        entries[key] = entries.get(key, 0.0) + float(toks[4])
    return mdim, sizes, c, entries


class _EntryAccumulator:
    """Collects full symmetric coefficient matrices entry by entry."""

    def __init__(self):
        self.full = {}

    def add(self, matno, blk, r, c, val):
        if val == 0.0:
            return
        key = (matno, blk, r, c)
        self.full[key] = self.full.get(key, 0.0) + val

    def add_sym(self, matno, blk, r, c, val):
        self.add(matno, blk, r, c, val)
        if r != c:
            self.add(matno, blk, c, r, val)

    def upper(self) -> dict:
        out = {}
        for (matno, blk, r, c), val in self.full.items():
            if r <= c and val != 0.0:
                # 1-based indices for the interchange format
                out[(matno, blk, r + 1, c + 1)] = val
        return out


def export_sdpa(sys: NetworkSystem, cfg: MPCConfig) -> LMIExport:
    """Emit the min-delta synthesis SDP in SDPA sparse format.

    Requires equal state dimensions across subsystems (the shared scaling
    matrix G makes the neighborhood blocks commensurate); refuses otherwise.
    """
    cfg.validate_against(sys)
    M = sys.subsystem_count
    nset = set(sys.state_sizes)
    if len(nset) > 1:
        raise ValueError(
            "SDPA export requires all subsystems to share one state dimension "
            f"(got {sys.state_sizes}); the shared scaling matrix assumes it")
    nb = sys.state_sizes[0]
    n = sys.state_dim
    orders = [neighborhood_order(sys, i) for i in range(M)]
    n_ni = [nb * len(orders[i]) for i in range(M)]

    # variable inventory (1-based indices); neighbor feedback copies alias
    # the originals, enforcing the shared-feedback equalities identically
    variables: list[VariableInfo] = []
    idx = 1

    def register(name, shape, count):
        nonlocal idx
        variables.append(VariableInfo(name, shape, idx, count))
        first = idx
        idx += count
        return first

    g0 = register("G", (nb, nb), nb * nb)
    s0 = [register(f"S{i}", (nb, nb), nb * (nb + 1) // 2) for i in range(M)]
    y0 = [register(f"Y{i}", (sys.input_sizes[i], nb), sys.input_sizes[i] * nb)
          for i in range(M)]
    for i in range(M):
        for j in orders[i][1:]:
            variables.append(VariableInfo(f"Y{i},{j}", (sys.input_sizes[j], nb), 0, 0,
                                          alias=f"Y{j}"))
    w0 = [register(f"Wt{i}", (n_ni[i], n_ni[i]), n_ni[i] * (n_ni[i] + 1) // 2)
          for i in range(M)]
    mu_idx = [register(f"mu{i}", (), 1) for i in range(M)]
    delta_idx = register("delta", (), 1)
    mdim = idx - 1

    def g_var(a, b):
        return g0 + a * nb + b

    def s_var(i, a, b):
        a, b = (a, b) if a <= b else (b, a)
        return s0[i] + a * nb - a * (a - 1) // 2 + (b - a)

    def y_var(j, r, b):
        return y0[j] + r * nb + b

    def w_var(i, a, b):
        a, b = (a, b) if a <= b else (b, a)
        return w0[i] + a * n_ni[i] - a * (a - 1) // 2 + (b - a)

    acc = _EntryAccumulator()
    for i in range(M):
        blk = i + 1
        order = orders[i]
        K = len(order)
        _, A_ni, B_ni = _neighborhood_selectors(sys, i)
        m_i = sys.input_sizes[i]
        s1, s2 = 0, n_ni[i]
        s3 = 2 * n_ni[i]

        # (1,1): G^{N_i} + (G^{N_i})' - S^{N_i} + Wt^{N_i}
        for p in range(K):
            off = s1 + p * nb
            for a in range(nb):
                for b in range(nb):
                    acc.add(g_var(a, b), blk, off + a, off + b, 1.0)
                    acc.add(g_var(a, b), blk, off + b, off + a, 1.0)
        for a in range(nb):
            for b in range(a, nb):
                acc.add_sym(s_var(i, a, b), blk, s1 + a, s1 + b, -1.0)
        for p in range(1, K):
            for a in range(nb):
                acc.add(mu_idx[i], blk, s1 + p * nb + a, s1 + p * nb + a, -1.0)
        for a in range(n_ni[i]):
            for b in range(a, n_ni[i]):
                acc.add_sym(w_var(i, a, b), blk, s1 + a, s1 + b, 1.0)

        # (2,2): S^{N_i}
        for a in range(nb):
            for b in range(a, nb):
                acc.add_sym(s_var(i, a, b), blk, s2 + a, s2 + b, 1.0)
        for p in range(1, K):
            for a in range(nb):
                acc.add(mu_idx[i], blk, s2 + p * nb + a, s2 + p * nb + a, 1.0)

        # (2,1): rows of A^{N_i} G^{N_i} + B^{N_i} Y^{N_i}, then [0  I x G]
        moffs = np.cumsum([0] + [sys.input_sizes[j] for j in order])
        for r in range(nb):
            for p in range(K):
                jp = order[p]
                for b in range(nb):
                    col = s1 + p * nb + b
                    for a in range(nb):
                        acc.add_sym(g_var(a, b), blk, s2 + r, col,
                                    float(A_ni[r, p * nb + a]))
                    for cc in range(sys.input_sizes[jp]):
                        acc.add_sym(y_var(jp, cc, b), blk, s2 + r, col,
                                    float(B_ni[r, moffs[p] + cc]))
        for p in range(1, K):
            for a in range(nb):
                row = s2 + nb + (p - 1) * nb + a
                for b in range(nb):
                    acc.add_sym(g_var(a, b), blk, row, s1 + p * nb + b, 1.0)

        # (3,1): [(Q^i)^(1/2) G ; (R^i)^(1/2) Y^i] in the slot-0 columns
        Qs = _sym_sqrt(cfg.state_weights[i])
        Rs = _sym_sqrt(cfg.input_weights[i])
        for r in range(nb):
            for b in range(nb):
                for a in range(nb):
                    acc.add_sym(g_var(a, b), blk, s3 + r, s1 + b, float(Qs[r, a]))
        for r in range(m_i):
            for b in range(nb):
                for cc in range(m_i):
                    acc.add_sym(y_var(i, cc, b), blk, s3 + nb + r, s1 + b,
                                float(Rs[r, cc]))

        # (3,3): constant identity -> F0 = -I there
        for r in range(nb + m_i):
            acc.add(0, blk, s3 + r, s3 + r, -1.0)

    # last block: delta I - assembled Wt >= 0
    blk = M + 1
    for a in range(n):
        acc.add(delta_idx, blk, a, a, 1.0)
    for i in range(M):
        order = orders[i]
        goffs = [sys.state_offsets[j] for j in order]
        for p in range(len(order)):
            for q in range(len(order)):
                for a in range(nb):
                    for b in range(nb):
                        la, lb = p * nb + a, q * nb + b
                        if la > lb:
                            continue
                        gr, gc = goffs[p] + a, goffs[q] + b
                        acc.add(w_var(i, la, lb), blk, gr, gc, -1.0)
                        if la != lb:
                            acc.add(w_var(i, la, lb), blk, gc, gr, -1.0)

    c = np.zeros(mdim)
    c[delta_idx - 1] = 1.0
    sizes = tuple(2 * n_ni[i] + sys.state_sizes[i] + sys.input_sizes[i] for i in range(M))
    sizes = sizes + (n,)
    return LMIExport(mdim=mdim, block_sizes=sizes, c=c, entries=acc.upper(),
                     variables=tuple(variables))


def candidate_from_lmi_solution(sys: NetworkSystem, G, S, Y, Wt) -> TerminalCandidate:
    """Map SDP variables back to a candidate: P^i = inv(S^i), F^i = Y^i inv(G).

    Wt maps subsystem -> local slack in the scaled coordinates; the slacks
    are pulled back through the shared scaling blockwise.
    """
    G = np.asarray(G, dtype=float)
    Ginv = np.linalg.inv(G)
    P = []
    F = []
    for i in range(sys.subsystem_count):
        Si = np.asarray(S[i], dtype=float)
        Pi = np.linalg.inv(0.5 * (Si + Si.T))
        P.append(0.5 * (Pi + Pi.T))
        F.append(np.asarray(Y[i], dtype=float) @ Ginv)
    W_blocks = {}
    for i, w in Wt.items():
        order = neighborhood_order(sys, int(i))
        Gninv = np.kron(np.eye(len(order)), Ginv)
        W_blocks[int(i)] = Gninv.T @ np.asarray(w, dtype=float) @ Gninv
    return TerminalCandidate(P=tuple(P), F=tuple(F), W_blocks=W_blocks)


def save_candidate(cand: TerminalCandidate, path) -> None:
    with open(path, "w") as fh:
        json.dump(cand.to_json(), fh)


def load_candidate(path) -> TerminalCandidate:
    with open(path) as fh:
        return TerminalCandidate.from_json(json.load(fh))
