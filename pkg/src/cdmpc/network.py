"""Coupled linear network systems and MPC-to-QP condensation.

A network system is a graph of subsystems with block dynamics

    x^i_{t+1} = sum_{j in N^i} A^{ij} x^j_t + B^{ij} u^j_t,

stored sparsely (absent blocks are zero).  Condensation eliminates the
states from the horizon-N quadratic cost and returns a BlockedQP over the
subsystem-major stacked inputs, together with the input-independent part of
the cost.  When the states are block-decoupled (A block-diagonal), the
condensed Hessian inherits the two-hop neighborhood sparsity and the linear
map inherits the out-neighbor sparsity; those blocks are simply not stored.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .blockqp import BlockedQP, BlockPartition, BoxSet

__all__ = [
    "NetworkSystem",
    "MPCConfig",
    "StackedTrajectory",
    "NeighborhoodPattern",
    "QuadraticForm",
    "Condensation",
    "simulate_linear",
    "sparsity_pattern",
    "horizon_cost",
    "condense",
    "system_to_json",
    "system_from_json",
    "config_to_json",
    "config_from_json",
]


def _block_map(blocks, row_sizes, col_sizes, name):
    out = {}
    for (i, j), mat in blocks.items():
        if not (0 <= i < len(row_sizes) and 0 <= j < len(col_sizes)):
            raise ValueError(f"{name} block index {(i, j)} out of range")
        a = np.asarray(mat, dtype=float)
        expect = (row_sizes[i], col_sizes[j])
        if a.shape != expect:
            raise ValueError(f"{name}[{i},{j}] has shape {a.shape}, expected {expect}")
        out[(i, j)] = a
    return out


@dataclass
class NetworkSystem:
    """Block-sparse pair (A, B) over M subsystems."""

    state_sizes: tuple[int, ...]
    input_sizes: tuple[int, ...]
    A_blocks: dict
    B_blocks: dict

    def __post_init__(self):
        self.state_sizes = tuple(int(s) for s in self.state_sizes)
        self.input_sizes = tuple(int(s) for s in self.input_sizes)
        if len(self.state_sizes) != len(self.input_sizes):
            raise ValueError("need one state size and one input size per subsystem")
        self.A_blocks = _block_map(self.A_blocks, self.state_sizes, self.state_sizes, "A")
        self.B_blocks = _block_map(self.B_blocks, self.state_sizes, self.input_sizes, "B")

    @property
    def subsystem_count(self) -> int:
        return len(self.state_sizes)

    @property
    def state_dim(self) -> int:
        return sum(self.state_sizes)

    @property
    def input_dim(self) -> int:
        return sum(self.input_sizes)

    @cached_property
    def state_offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.cumsum((0,) + self.state_sizes)[:-1])

    @cached_property
    def input_offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.cumsum((0,) + self.input_sizes)[:-1])

    def state_slice(self, i: int) -> slice:
        return slice(self.state_offsets[i], self.state_offsets[i] + self.state_sizes[i])

    def input_slice(self, i: int) -> slice:
        return slice(self.input_offsets[i], self.input_offsets[i] + self.input_sizes[i])

    def neighbors(self, i: int) -> tuple[int, ...]:
        """In-neighbor set: {j : A^{ij} or B^{ij} stored} plus i itself."""
        s = {i}
        for (a, j) in self.A_blocks:
            if a == i:
                s.add(j)
        for (a, j) in self.B_blocks:
            if a == i:
                s.add(j)
        return tuple(sorted(s))

    @property
    def has_decoupled_states(self) -> bool:
        return all(i == j for (i, j) in self.A_blocks)

    @cached_property
    def dense_A(self) -> np.ndarray:
        A = np.zeros((self.state_dim, self.state_dim))
        for (i, j), blk in self.A_blocks.items():
            A[self.state_slice(i), self.state_slice(j)] = blk
        A.setflags(write=False)
        return A

    @cached_property
    def dense_B(self) -> np.ndarray:
        B = np.zeros((self.state_dim, self.input_dim))
        for (i, j), blk in self.B_blocks.items():
            B[self.state_slice(i), self.input_slice(j)] = blk
        B.setflags(write=False)
        return B


@dataclass(frozen=True)
class NeighborhoodPattern:
    """In-neighbors N^i, out-neighbors Nbar^i and two-hop sets Nhat^i."""

    in_neighbors: tuple[tuple[int, ...], ...]
    out_neighbors: tuple[tuple[int, ...], ...]
    two_hop: tuple[tuple[int, ...], ...]


def sparsity_pattern(sys: NetworkSystem) -> NeighborhoodPattern:
    M = sys.subsystem_count
    n_in = [set(sys.neighbors(i)) for i in range(M)]
    n_out = [{j for j in range(M) if i in n_in[j]} for i in range(M)]
    n_hat = []
    for i in range(M):
        s = set(n_in[i])
        for j in n_out[i]:
            s |= n_in[j]
        n_hat.append(s)
    return NeighborhoodPattern(
        in_neighbors=tuple(tuple(sorted(s)) for s in n_in),
        out_neighbors=tuple(tuple(sorted(s)) for s in n_out),
        two_hop=tuple(tuple(sorted(s)) for s in n_hat),
    )


@dataclass
class StackedTrajectory:
    """States x_0..x_N (rows) and inputs u_0..u_{N-1} (rows)."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.inputs.ndim != 2:
            raise ValueError("states and inputs must be 2-d (time on the first axis)")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("need exactly one more state row than input rows")

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def dynamics_residual(self, sys: NetworkSystem) -> float:
        r = 0.0
        for t in range(self.horizon):
            pred = sys.dense_A @ self.states[t] + sys.dense_B @ self.inputs[t]
            r = max(r, float(np.max(np.abs(self.states[t + 1] - pred), initial=0.0)))
        return r


def simulate_linear(sys: NetworkSystem, x0, inputs) -> StackedTrajectory:
    """Roll the block dynamics forward, touching stored blocks only."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.state_dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({sys.state_dim},)")
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != sys.input_dim:
        raise ValueError(f"inputs must be (N, {sys.input_dim}), got {inputs.shape}")
    N = inputs.shape[0]
    states = np.zeros((N + 1, sys.state_dim))
    states[0] = x0
    for t in range(N):
        nxt = states[t + 1]
        for (i, j), blk in sys.A_blocks.items():
            nxt[sys.state_slice(i)] += blk @ states[t, sys.state_slice(j)]
        for (i, j), blk in sys.B_blocks.items():
            nxt[sys.state_slice(i)] += blk @ inputs[t, sys.input_slice(j)]
    return StackedTrajectory(states=states, inputs=inputs)


@dataclass
class MPCConfig:
    """Horizon, quadratic stage/terminal weights, input boxes, references."""

    horizon: int
    state_weights: tuple  # Q^i, PSD
    input_weights: tuple  # R^i, PD
    terminal_weights: tuple  # P^i
    input_boxes: tuple  # BoxSet per subsystem, constant over the horizon
    x_ref: np.ndarray | None = None
    u_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        self.state_weights = tuple(np.asarray(q, dtype=float) for q in self.state_weights)
        self.input_weights = tuple(np.asarray(r, dtype=float) for r in self.input_weights)
        self.terminal_weights = tuple(np.asarray(p, dtype=float) for p in self.terminal_weights)
        self.input_boxes = tuple(self.input_boxes)
        for i, r in enumerate(self.input_weights):
            if np.linalg.eigvalsh(0.5 * (r + r.T))[0] <= 0.0:
                raise ValueError(f"input weight R[{i}] must be positive definite")
        for i, b in enumerate(self.input_boxes):
            if not b.is_bounded:
                warnings.warn(f"input box {i} is unbounded; the solvers handle this "
                              "but the stability analysis assumes compact sets")
        if self.x_ref is not None:
            self.x_ref = np.asarray(self.x_ref, dtype=float)
        if self.u_ref is not None:
            self.u_ref = np.asarray(self.u_ref, dtype=float)

    def validate_against(self, sys: NetworkSystem) -> None:
        M = sys.subsystem_count
        if not (len(self.state_weights) == len(self.input_weights)
                == len(self.terminal_weights) == len(self.input_boxes) == M):
            raise ValueError("need one weight/box set per subsystem")
        for i in range(M):
            n_i, m_i = sys.state_sizes[i], sys.input_sizes[i]
            if self.state_weights[i].shape != (n_i, n_i):
                raise ValueError(f"Q[{i}] shape mismatch")
            if self.input_weights[i].shape != (m_i, m_i):
                raise ValueError(f"R[{i}] shape mismatch")
            if self.terminal_weights[i].shape != (n_i, n_i):
                raise ValueError(f"P[{i}] shape mismatch")
            if self.input_boxes[i].dim != m_i:
                raise ValueError(f"box[{i}] dimension mismatch")
        if self.x_ref is not None and self.x_ref.shape != (sys.state_dim,):
            raise ValueError("x_ref dimension mismatch")
        if self.u_ref is not None and self.u_ref.shape != (sys.input_dim,):
            raise ValueError("u_ref dimension mismatch")

    def stage_cost(self, sys: NetworkSystem, x, u) -> float:
        """l(x, u) = sum_i ||x^i - xr^i||^2_{Q^i} + ||u^i - ur^i||^2_{R^i}."""
        dx = x - self.x_ref if self.x_ref is not None else np.asarray(x, dtype=float)
        du = u - self.u_ref if self.u_ref is not None else np.asarray(u, dtype=float)
        acc = 0.0
        for i in range(sys.subsystem_count):
            xi = dx[sys.state_slice(i)]
            ui = du[sys.input_slice(i)]
            acc += float(xi @ self.state_weights[i] @ xi)
            acc += float(ui @ self.input_weights[i] @ ui)
        return acc

    def terminal_cost(self, sys: NetworkSystem, x) -> float:
        dx = x - self.x_ref if self.x_ref is not None else np.asarray(x, dtype=float)
        acc = 0.0
        for i in range(sys.subsystem_count):
            xi = dx[sys.state_slice(i)]
            acc += float(xi @ self.terminal_weights[i] @ xi)
        return acc


def horizon_cost(sys: NetworkSystem, cfg: MPCConfig, x, inputs) -> float:
    """V_N(x, u): simulate and accumulate stage plus terminal costs."""
    cfg.validate_against(sys)
    traj = simulate_linear(sys, x, inputs)
    if traj.horizon != cfg.horizon:
        raise ValueError(f"inputs cover {traj.horizon} steps, config horizon is {cfg.horizon}")
    acc = 0.0
    for t in range(cfg.horizon):
        acc += cfg.stage_cost(sys, traj.states[t], traj.inputs[t])
    acc += cfg.terminal_cost(sys, traj.states[cfg.horizon])
    return acc


@dataclass
class QuadraticForm:
    """c(x) = x'Px + b'x + c0."""

    P: np.ndarray
    b: np.ndarray
    c0: float

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x + self.b @ x + self.c0)


@dataclass
class Condensation:
    """Condensed QP over subsystem-major inputs plus the leftover constant.

    For every state x and admissible u:  qp.value(u, x) + constant.value(x)
    equals the horizon cost.  perm maps subsystem-major positions to
    time-major positions of the stacked input.
    """

    qp: BlockedQP
    constant: QuadraticForm
    perm: np.ndarray
    horizon: int
    input_sizes: tuple[int, ...]

    def to_decision(self, inputs) -> np.ndarray:
        """(N, m) time-major input trajectory -> flat subsystem-major vector."""
        flat = np.asarray(inputs, dtype=float).reshape(-1)
        return flat[self.perm]

    def to_trajectory(self, u) -> np.ndarray:
        """Flat subsystem-major vector -> (N, m) time-major trajectory."""
        m = sum(self.input_sizes)
        flat = np.empty(self.horizon * m)
        flat[self.perm] = np.asarray(u, dtype=float)
        return flat.reshape(self.horizon, m)


def _blockdiag(mats) -> np.ndarray:
    sizes = [m.shape[0] for m in mats]
    out = np.zeros((sum(sizes), sum(sizes)))
    off = 0
    for m in mats:
        out[off:off + m.shape[0], off:off + m.shape[0]] = m
        off += m.shape[0]
    return out


def condense(sys: NetworkSystem, cfg: MPCConfig) -> Condensation:
    """Eliminate the states from the horizon cost.

    Returns a BlockedQP whose block i stacks the N inputs of subsystem i
    (size N*m_i), with f(u; x) + constant(x) matching horizon_cost exactly.
    """
    cfg.validate_against(sys)
    N = cfg.horizon
    n, m, M = sys.state_dim, sys.input_dim, sys.subsystem_count
    A, B = sys.dense_A, sys.dense_B
    Qbar = _blockdiag(cfg.state_weights)
    Rbar = _blockdiag(cfg.input_weights)
    Pbar = _blockdiag(cfg.terminal_weights)

    # prediction operator (time-major): X = Gam x + H U, X = (x_1 .. x_N)
    Apow = [np.eye(n)]
    for _ in range(N):
        Apow.append(A @ Apow[-1])
    Gam = np.vstack(Apow[1:N + 1])
    H = np.zeros((N * n, N * m))
    for t in range(1, N + 1):
        for s in range(t):
            H[(t - 1) * n:t * n, s * m:(s + 1) * m] = Apow[t - 1 - s] @ B

    # weighted copies of H and Gam (stage weights for x_1..x_{N-1}, terminal
    # weight for x_N), avoiding an explicit N*n x N*n weight matrix
    weights = [Qbar] * (N - 1) + [Pbar]
    QH = np.vstack([weights[t] @ H[t * n:(t + 1) * n] for t in range(N)])
    QGam = np.vstack([weights[t] @ Apow[t + 1] for t in range(N)])

    Q_time = 2.0 * (H.T @ QH)
    for t in range(N):
        Q_time[t * m:(t + 1) * m, t * m:(t + 1) * m] += 2.0 * Rbar
    Q_time = 0.5 * (Q_time + Q_time.T)
    W_time = 2.0 * (H.T @ QGam)

    w_time = np.zeros(N * m)
    c_quad = Gam.T @ QGam + Qbar
    c_lin = np.zeros(n)
    c_const = 0.0
    if cfg.x_ref is not None:
        Xr = np.tile(cfg.x_ref, N)
        QXr = np.concatenate([weights[t] @ cfg.x_ref for t in range(N)])
        w_time -= 2.0 * (H.T @ QXr)
        c_lin -= 2.0 * (Gam.T @ QXr + Qbar @ cfg.x_ref)
        c_const += float(Xr @ QXr) + float(cfg.x_ref @ Qbar @ cfg.x_ref)
    if cfg.u_ref is not None:
        RUr = Rbar @ cfg.u_ref
        for t in range(N):
            w_time[t * m:(t + 1) * m] -= 2.0 * RUr
        c_const += N * float(cfg.u_ref @ RUr)

    # reorder from time-major to subsystem-major stacking
    perm = np.empty(N * m, dtype=np.intp)
    pos = 0
    for i in range(M):
        m_i = sys.input_sizes[i]
        for t in range(N):
            base = t * m + sys.input_offsets[i]
            perm[pos:pos + m_i] = np.arange(base, base + m_i)
            pos += m_i
    Q_sub = Q_time[np.ix_(perm, perm)]
    W_sub = W_time[perm, :]
    w_sub = w_time[perm]

    part = BlockPartition(tuple(N * m_i for m_i in sys.input_sizes))
    pattern = sparsity_pattern(sys)
    decoupled = sys.has_decoupled_states
    Q_blocks = {}
    for i in range(M):
        for j in range(M):
            if decoupled and j not in pattern.two_hop[i]:
                continue
            blk = Q_sub[part.slice(i), part.slice(j)]
            if np.count_nonzero(blk):
                Q_blocks[(i, j)] = np.ascontiguousarray(blk)
    W_blocks = {}
    for i in range(M):
        for j in range(M):
            if decoupled and j not in pattern.out_neighbors[i]:
                continue
            blk = W_sub[part.slice(i), sys.state_slice(j)]
            if np.count_nonzero(blk):
                W_blocks[(i, j)] = np.ascontiguousarray(blk)

    boxes = [BoxSet(np.tile(cfg.input_boxes[i].lower, N), np.tile(cfg.input_boxes[i].upper, N))
             for i in range(M)]
    qp = BlockedQP(part, Q_blocks, W=W_blocks or None, w=w_sub, boxes=boxes,
                   state_sizes=sys.state_sizes if W_blocks else None)
    constant = QuadraticForm(P=c_quad, b=c_lin, c0=c_const)
    return Condensation(qp=qp, constant=constant, perm=perm, horizon=N,
                        input_sizes=sys.input_sizes)


# -- JSON interchange ---------------------------------------------------

def system_to_json(sys: NetworkSystem) -> dict:
    return {
        "M": sys.subsystem_count,
        "n": list(sys.state_sizes),
        "m": list(sys.input_sizes),
        "A": {f"{i},{j}": blk.tolist() for (i, j), blk in sorted(sys.A_blocks.items())},
        "B": {f"{i},{j}": blk.tolist() for (i, j), blk in sorted(sys.B_blocks.items())},
    }


def system_from_json(doc: dict) -> NetworkSystem:
    def parse(blocks):
        out = {}
        for key, mat in blocks.items():
            i, j = key.split(",")
            out[(int(i), int(j))] = np.asarray(mat, dtype=float)
        return out

    sys = NetworkSystem(
        state_sizes=tuple(doc["n"]),
        input_sizes=tuple(doc["m"]),
        A_blocks=parse(doc.get("A", {})),
        B_blocks=parse(doc.get("B", {})),
    )
    if "M" in doc and int(doc["M"]) != sys.subsystem_count:
        raise ValueError("M does not match the length of n/m")
    return sys


def config_to_json(cfg: MPCConfig) -> dict:
    doc = {
        "N": cfg.horizon,
        "Q": [q.tolist() for q in cfg.state_weights],
        "R": [r.tolist() for r in cfg.input_weights],
        "P": [p.tolist() for p in cfg.terminal_weights],
        "boxes": [{"lo": b.lower.tolist(), "hi": b.upper.tolist()} for b in cfg.input_boxes],
    }
    if cfg.x_ref is not None:
        doc["x_ref"] = cfg.x_ref.tolist()
    if cfg.u_ref is not None:
        doc["u_ref"] = cfg.u_ref.tolist()
    return doc


def config_from_json(doc: dict) -> MPCConfig:
    return MPCConfig(
        horizon=int(doc["N"]),
        state_weights=tuple(np.asarray(q, dtype=float) for q in doc["Q"]),
        input_weights=tuple(np.asarray(r, dtype=float) for r in doc["R"]),
        terminal_weights=tuple(np.asarray(p, dtype=float) for p in doc["P"]),
        input_boxes=tuple(BoxSet(np.asarray(b["lo"], dtype=float),
                                 np.asarray(b["hi"], dtype=float)) for b in doc["boxes"]),
        x_ref=np.asarray(doc["x_ref"], dtype=float) if "x_ref" in doc else None,
        u_ref=np.asarray(doc["u_ref"], dtype=float) if "u_ref" in doc else None,
    )


def load_system(path) -> NetworkSystem:
    with open(path) as fh:
        return system_from_json(json.load(fh))


def save_system(sys: NetworkSystem, path) -> None:
    with open(path, "w") as fh:
        json.dump(system_to_json(sys), fh)


def load_config(path) -> MPCConfig:
    with open(path) as fh:
        return config_from_json(json.load(fh))


def save_config(cfg: MPCConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_json(cfg), fh)
