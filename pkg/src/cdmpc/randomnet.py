"""Seeded random ring networks for solver and MPC benchmarks.

Subsystems sit on a ring with in-neighbors {i-1, i, i+1}; the dynamics
blocks are standard normal and the assembled A is scaled globally so its
spectral radius is one (neutrally stable).  Stage weights are random PSD/PD
and the input boxes straddle the origin with random bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are

from .blockqp import BoxSet
from .network import MPCConfig, NetworkSystem

__all__ = ["RandomNetSpec", "random_network"]


@dataclass(frozen=True)
class RandomNetSpec:
    subsystem_count: int = 8
    state_size: int = 5
    input_size: int = 5
    horizon: int = 12
    seed: int = 0
    box_scale: float = 1.0
    decoupled_states: bool = False  # keep A block-diagonal (ring coupling via B only)

    def __post_init__(self):
        if self.subsystem_count < 3:
            raise ValueError("a ring needs at least three subsystems")
        if min(self.state_size, self.input_size, self.horizon) < 1:
            raise ValueError("dimensions and horizon must be positive")
        if self.box_scale <= 0:
            raise ValueError("box_scale must be positive")


def _ring_neighbors(i: int, M: int) -> tuple[int, ...]:
    return ((i - 1) % M, i, (i + 1) % M)


def random_network(spec: RandomNetSpec) -> tuple[NetworkSystem, MPCConfig]:
    """Generate the system and its MPC configuration from the seed.

    The draw order is fixed, so identical specs give bitwise identical
    systems.  Terminal weights come from each subsystem's own Riccati
    equation (a cheap stand-in for a synthesized candidate).
    """
    rng = np.random.default_rng(spec.seed)
    M, n_i, m_i = spec.subsystem_count, spec.state_size, spec.input_size

    A_blocks, B_blocks = {}, {}
    for i in range(M):
        for j in _ring_neighbors(i, M):
            if j == i or not spec.decoupled_states:
                A_blocks[(i, j)] = rng.normal(size=(n_i, n_i))
        for j in _ring_neighbors(i, M):
            B_blocks[(i, j)] = rng.normal(size=(n_i, m_i))

    dense = np.zeros((M * n_i, M * n_i))
    for (i, j), blk in A_blocks.items():
        dense[i * n_i:(i + 1) * n_i, j * n_i:(j + 1) * n_i] = blk
    rho = float(np.max(np.abs(np.linalg.eigvals(dense))))
    for key in A_blocks:
        A_blocks[key] = A_blocks[key] / rho

    sys = NetworkSystem((n_i,) * M, (m_i,) * M, A_blocks, B_blocks)

    Q, R, P, boxes = [], [], [], []
    for i in range(M):
        G = rng.normal(size=(n_i, n_i))
        Q.append(G.T @ G)
        G = rng.normal(size=(m_i, m_i))
        R.append(G.T @ G + 0.1 * np.eye(m_i))
        lo = -spec.box_scale * (0.1 + np.abs(rng.normal(size=m_i)))
        hi = spec.box_scale * (0.1 + np.abs(rng.normal(size=m_i)))
        boxes.append(BoxSet(lo, hi))
    for i in range(M):
        Pi = solve_discrete_are(sys.A_blocks[(i, i)], sys.B_blocks[(i, i)],
                                Q[i], R[i])
        P.append(0.5 * (Pi + Pi.T))

    cfg = MPCConfig(horizon=spec.horizon, state_weights=tuple(Q),
                    input_weights=tuple(R), terminal_weights=tuple(P),
                    input_boxes=tuple(boxes))
    return sys, cfg
