"""Block-structured box-constrained quadratic programs.

The decision vector u is split into M blocks u^1, .., u^M.  The objective is

    f(u) = 0.5 u^T Q u + (W x + w)^T u,

with Q stored as a map from block pairs (i, j) to dense blocks (absent pair
means a zero block), W as a map from (input block, state block) pairs, and
each block constrained to a box.  Per-block gradient Lipschitz constants
L_i = lambda_max(Q^{ii}) drive the coordinate solvers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "BlockPartition",
    "BoxSet",
    "BlockedQP",
    "block_lipschitz",
    "weighted_norm1",
    "sigma1",
    "project_box",
    "densify",
    "qp_to_json",
    "qp_from_json",
]

# Floor used for the Lipschitz constant of a block whose diagonal Hessian
# block is zero; keeps the prox step well defined.
LIPSCHITZ_FLOOR = 1e-12

# lambda_min >= -PSD_TOL * ||Q||_2 counts as positive semidefinite.
PSD_TOL = 1e-8


@dataclass(frozen=True)
class BlockPartition:
    """Partition of an n-vector into M contiguous blocks."""

    block_sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(s) for s in self.block_sizes))
        if len(self.block_sizes) == 0:
            raise ValueError("partition needs at least one block")
        if any(s <= 0 for s in self.block_sizes):
            raise ValueError(f"block sizes must be positive, got {self.block_sizes}")

    @property
    def block_count(self) -> int:
        return len(self.block_sizes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.cumsum((0,) + self.block_sizes)[:-1])

    @property
    def total(self) -> int:
        return sum(self.block_sizes)

    def slice(self, i: int) -> slice:
        off = self.offsets[i]
        return slice(off, off + self.block_sizes[i])

    def split(self, u: np.ndarray) -> list[np.ndarray]:
        return [u[self.slice(i)] for i in range(self.block_count)]


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box, entries may be +-inf."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-d arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != self.lower.shape:
            raise ValueError(f"expected vector of length {self.dim}, got shape {v.shape}")
        return np.clip(v, self.lower, self.upper)

    def contains(self, v: np.ndarray, atol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - atol) and np.all(v <= self.upper + atol))


def project_box(box: BoxSet, v: np.ndarray) -> np.ndarray:
    """Elementwise clamp of v onto the box (idempotent)."""
    return box.project(v)


def _as_block(mat, rows: int, cols: int, name: str) -> np.ndarray:
    a = np.asarray(mat, dtype=float)
    if a.shape != (rows, cols):
        raise ValueError(f"{name} has shape {a.shape}, expected {(rows, cols)}")
    return a


class BlockedQP:
    """Convex QP  f(u) = 0.5 u'Qu + (Wx + w)'u  over a product of boxes.

    Parameters
    ----------
    partition : BlockPartition
        Block layout of the decision vector.
    Q : dict[(int, int), array]
        Hessian blocks; a missing (i, j) is a zero block.  If only one of
        (i, j)/(j, i) is given the transpose is filled in; if both are given
        they must be consistent.
    W : dict[(int, int), array], optional
        Maps state block j to the linear term of input block i.
    w : array, optional
        Constant linear term (defaults to zero).
    boxes : sequence of BoxSet
        One box per block.
    state_sizes : sequence of int, optional
        Block layout of the state vector x; required when W is nonempty and
        cannot be inferred unambiguously from the stored W blocks.

    Instances are read-only after construction and safe to share between
    workers.
    """

    def __init__(self, partition, Q, W=None, w=None, boxes=None, state_sizes=None):
        self.partition = partition
        M = partition.block_count
        sizes = partition.block_sizes

        blocks: dict[tuple[int, int], np.ndarray] = {}
        for (i, j), mat in Q.items():
            if not (0 <= i < M and 0 <= j < M):
                raise ValueError(f"Q block index {(i, j)} out of range for M={M}")
            blocks[(i, j)] = _as_block(mat, sizes[i], sizes[j], f"Q[{i},{j}]")
        for (i, j) in list(blocks):
            t = (j, i)
            if t not in blocks:
                blocks[t] = blocks[(i, j)].T.copy()
            else:
                scale = 1.0 + max(np.abs(blocks[(i, j)]).max(initial=0.0),
                                  np.abs(blocks[t]).max(initial=0.0))
                if not np.allclose(blocks[(i, j)], blocks[t].T, atol=1e-8 * scale, rtol=0.0):
                    raise ValueError(f"Q blocks ({i},{j}) and ({j},{i}) are not transposes")
        self.Q = blocks

        self.W = {}
        if W:
            if state_sizes is None:
                state_sizes = _infer_state_sizes(W)
            state_sizes = tuple(int(s) for s in state_sizes)
            for (i, j), mat in W.items():
                if not (0 <= i < M and 0 <= j < len(state_sizes)):
                    raise ValueError(f"W block index {(i, j)} out of range")
                self.W[(i, j)] = _as_block(mat, sizes[i], state_sizes[j], f"W[{i},{j}]")
        self.state_sizes = tuple(state_sizes) if state_sizes is not None else None

        self.w = np.zeros(partition.total) if w is None else np.asarray(w, dtype=float)
        if self.w.shape != (partition.total,):
            raise ValueError(f"w has shape {self.w.shape}, expected ({partition.total},)")

        if boxes is None:
            boxes = [BoxSet(np.full(s, -np.inf), np.full(s, np.inf)) for s in sizes]
        boxes = tuple(boxes)
        if len(boxes) != M or any(b.dim != s for b, s in zip(boxes, sizes)):
            raise ValueError("need one box per block with matching dimension")
        self.boxes = boxes

        L = []
        degenerate = []
        for i in range(M):
            diag = self.Q.get((i, i))
            if diag is None or not np.any(diag):
                L.append(LIPSCHITZ_FLOOR)
                degenerate.append(i)
            else:
                if not np.allclose(diag, diag.T, atol=1e-10 * (1.0 + np.abs(diag).max()), rtol=0.0):
                    raise ValueError(f"diagonal block Q[{i},{i}] is not symmetric")
                L.append(float(np.linalg.eigvalsh(0.5 * (diag + diag.T))[-1]))
        self.L = tuple(L)
        self.degenerate_blocks = tuple(degenerate)

    # -- objective -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.partition.total

    @property
    def state_dim(self) -> int:
        return 0 if self.state_sizes is None else sum(self.state_sizes)

    def _check_x(self, x):
        if self.W:
            if x is None:
                raise ValueError("x is required: this QP has a nonempty W map")
            x = np.asarray(x, dtype=float)
            if x.shape != (self.state_dim,):
                raise ValueError(f"x has shape {x.shape}, expected ({self.state_dim},)")
            return x
        if x is not None:
            raise ValueError("x supplied but this QP has an empty W map")
        return None

    def linear_term(self, x=None) -> np.ndarray:
        """The full linear coefficient Wx + w."""
        x = self._check_x(x)
        q = self.w.copy()
        if self.W:
            soff = np.cumsum((0,) + self.state_sizes)
            for (i, j), blk in self.W.items():
                q[self.partition.slice(i)] += blk @ x[soff[j]:soff[j + 1]]
        return q

    def value(self, u, x=None) -> float:
        """Objective 0.5 u'Qu + (Wx+w)'u, touching stored blocks only."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"u has shape {u.shape}, expected ({self.dim},)")
        part = self.partition
        acc = float(self.linear_term(x) @ u)
        for (i, j), blk in self.Q.items():
            acc += 0.5 * float(u[part.slice(i)] @ blk @ u[part.slice(j)])
        return acc

    def partial_gradient(self, u, i, x=None) -> np.ndarray:
        """Gradient of f restricted to block i, from neighborhood blocks only."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"u has shape {u.shape}, expected ({self.dim},)")
        if not 0 <= i < self.partition.block_count:
            raise ValueError(f"block index {i} out of range")
        part = self.partition
        g = self.w[part.slice(i)].copy()
        for (a, j), blk in self.Q.items():
            if a == i:
                g += blk @ u[part.slice(j)]
        if self.W:
            x = self._check_x(x)
            soff = np.cumsum((0,) + self.state_sizes)
            for (a, j), blk in self.W.items():
                if a == i:
                    g += blk @ x[soff[j]:soff[j + 1]]
        elif x is not None:
            self._check_x(x)
        return g

    def lipschitz(self, i: int) -> float:
        return self.L[i]

    # -- dense views (cached; the solvers' hot path) --------------------

    @cached_property
    def dense_Q(self) -> np.ndarray:
        n = self.dim
        Q = np.zeros((n, n))
        part = self.partition
        for (i, j), blk in self.Q.items():
            Q[part.slice(i), part.slice(j)] = blk
        Q.setflags(write=False)
        return Q

    @cached_property
    def dense_W(self) -> np.ndarray:
        W = np.zeros((self.dim, self.state_dim))
        if self.W:
            part = self.partition
            soff = np.cumsum((0,) + self.state_sizes)
            for (i, j), blk in self.W.items():
                W[part.slice(i), soff[j]:soff[j + 1]] = blk
        W.setflags(write=False)
        return W

    @cached_property
    def expanded_lipschitz(self) -> np.ndarray:
        out = np.empty(self.dim)
        for i in range(self.partition.block_count):
            out[self.partition.slice(i)] = self.L[i]
        out.setflags(write=False)
        return out

    @cached_property
    def stacked_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.concatenate([b.lower for b in self.boxes])
        hi = np.concatenate([b.upper for b in self.boxes])
        lo.setflags(write=False)
        hi.setflags(write=False)
        return lo, hi

    def full_gradient(self, u: np.ndarray) -> np.ndarray:
        if self.W:
            raise ValueError("bind a state first: full_gradient needs an empty W map")
        return self.dense_Q @ u + self.w

    def bind(self, x) -> "BlockedQP":
        """Fold the state into the linear term, yielding a pure QP in u."""
        if not self.W:
            if x is None:
                return self
            raise ValueError("nothing to bind: W map is empty")
        bound = BlockedQP.__new__(BlockedQP)
        bound.partition = self.partition
        bound.Q = self.Q
        bound.W = {}
        bound.state_sizes = None
        bound.w = self.linear_term(x)
        bound.boxes = self.boxes
        bound.L = self.L
        bound.degenerate_blocks = self.degenerate_blocks
        # share the symmetric dense cache; caches for W/bounds rebuild lazily
        if "dense_Q" in self.__dict__:
            bound.__dict__["dense_Q"] = self.__dict__["dense_Q"]
        return bound

    def project(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.stacked_bounds
        return np.clip(np.asarray(u, dtype=float), lo, hi)

    def feasible(self, u, atol: float = 0.0) -> bool:
        lo, hi = self.stacked_bounds
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= lo - atol) and np.all(u <= hi + atol))

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        """Smallest-eigenvalue PSD test at relative tolerance."""
        eigs = np.linalg.eigvalsh(0.5 * (self.dense_Q + self.dense_Q.T))
        norm = max(abs(eigs[0]), abs(eigs[-1]))
        return bool(eigs[0] >= -tol * norm)


def _infer_state_sizes(W) -> tuple[int, ...]:
    by_block: dict[int, int] = {}
    for (_, j), mat in W.items():
        cols = np.asarray(mat).shape[1]
        if by_block.setdefault(j, cols) != cols:
            raise ValueError(f"inconsistent column counts for state block {j}")
    if not by_block:
        return ()
    top = max(by_block)
    missing = [j for j in range(top + 1) if j not in by_block]
    if missing:
        raise ValueError(
            f"cannot infer sizes of state blocks {missing}; pass state_sizes explicitly")
    return tuple(by_block[j] for j in range(top + 1))


def block_lipschitz(qp: BlockedQP) -> tuple[float, ...]:
    """Per-block constants L_i = lambda_max(Q^{ii})."""
    return qp.L


def weighted_norm1(partition: BlockPartition, L, u) -> float:
    """sqrt(sum_i L_i ||u^i||^2), the norm the rate certificates live in."""
    L = np.asarray(L, dtype=float)
    if L.shape != (partition.block_count,):
        raise ValueError(f"need one weight per block, got shape {L.shape}")
    if np.any(L < 0):
        raise ValueError("weights must be nonnegative")
    u = np.asarray(u, dtype=float)
    if u.shape != (partition.total,):
        raise ValueError(f"u has shape {u.shape}, expected ({partition.total},)")
    acc = 0.0
    for i in range(partition.block_count):
        ui = u[partition.slice(i)]
        acc += L[i] * float(ui @ ui)
    return float(np.sqrt(acc))


def sigma1(qp: BlockedQP) -> float:
    """Strong-convexity modulus of f w.r.t. the L-weighted norm.

    Returns lambda_min(D^{-1/2} Q D^{-1/2}) with D the block-diagonal matrix
    of L_i, clamped to [0, 1]; 0 when Q is singular.
    """
    d = 1.0 / np.sqrt(qp.expanded_lipschitz)
    scaled = qp.dense_Q * d[:, None] * d[None, :]
    lam = float(np.linalg.eigvalsh(0.5 * (scaled + scaled.T))[0])
    return min(max(lam, 0.0), 1.0)


def densify(qp: BlockedQP) -> BlockedQP:
    """Equivalent QP with every block stored explicitly (zeros included)."""
    M = qp.partition.block_count
    Q = {(i, j): np.array(qp.dense_Q[qp.partition.slice(i), qp.partition.slice(j)])
         for i in range(M) for j in range(M)}
    W = None
    if qp.W:
        soff = np.cumsum((0,) + qp.state_sizes)
        W = {(i, j): np.array(qp.dense_W[qp.partition.slice(i), soff[j]:soff[j + 1]])
             for i in range(M) for j in range(len(qp.state_sizes))}
    return BlockedQP(qp.partition, Q, W=W, w=qp.w.copy(), boxes=qp.boxes,
                     state_sizes=qp.state_sizes)


# -- JSON interchange ---------------------------------------------------
#
# {"blocks": [..sizes], "Q": {"i,j": [[..]]}, "W": {"i,j": [[..]]},
#  "w": [..], "boxes": [{"lo": [..], "hi": [..]}], "n": [..state sizes]}
#
# Indices are 0-based; absent Q/W keys mean zero blocks; "n" is optional
# and only needed to place state blocks that appear in no W entry.

def qp_to_json(qp: BlockedQP) -> dict:
    doc = {
        "blocks": list(qp.partition.block_sizes),
        "Q": {f"{i},{j}": blk.tolist() for (i, j), blk in sorted(qp.Q.items())},
        "w": qp.w.tolist(),
        "boxes": [{"lo": b.lower.tolist(), "hi": b.upper.tolist()} for b in qp.boxes],
    }
    if qp.W:
        doc["W"] = {f"{i},{j}": blk.tolist() for (i, j), blk in sorted(qp.W.items())}
        doc["n"] = list(qp.state_sizes)
    return doc


def qp_from_json(doc: dict) -> BlockedQP:
    part = BlockPartition(tuple(doc["blocks"]))

    def parse_key(k):
        i, j = k.split(",")
        return int(i), int(j)

    Q = {parse_key(k): np.asarray(v, dtype=float) for k, v in doc.get("Q", {}).items()}
    W = {parse_key(k): np.asarray(v, dtype=float) for k, v in doc.get("W", {}).items()}
    boxes = None
    if "boxes" in doc:
        boxes = [BoxSet(np.asarray(b["lo"], dtype=float), np.asarray(b["hi"], dtype=float))
                 for b in doc["boxes"]]
    w = np.asarray(doc["w"], dtype=float) if "w" in doc else None
    state_sizes = tuple(doc["n"]) if "n" in doc else None
    return BlockedQP(part, Q, W=W or None, w=w, boxes=boxes, state_sizes=state_sizes)


def load_qp(path) -> BlockedQP:
    with open(path) as fh:
        return qp_from_json(json.load(fh))


def save_qp(qp: BlockedQP, path) -> None:
    with open(path, "w") as fh:
        json.dump(qp_to_json(qp), fh)
