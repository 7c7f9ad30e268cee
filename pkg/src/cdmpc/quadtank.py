"""Quadruple-tank process: nonlinear model, linearization, discretization
and the two-subsystem partition used for distributed control.

The plant is four interconnected water tanks fed by two pumps through
three-way valves; the controlled inputs are the valve ratios gamma_a and
gamma_b (pump flows fixed at their maxima).  Tank 4 drains into tank 1 and
tank 3 into tank 2, so the state pairs (h1, h4) and (h2, h3) form two
subsystems whose states are decoupled while the inputs couple them.
Internally everything is SI (m, s, m^3/s); pump flows are given in m^3/h
and converted at ingestion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_discrete_are

from .blockqp import BoxSet
from .network import MPCConfig, NetworkSystem

__all__ = [
    "QuadTankParams",
    "quadtank_linearize",
    "zoh_discretize",
    "quadtank_nonlinear_rhs",
    "quadtank_system",
    "STATE_PERMUTATION",
]

# partitioned state ordering: (h1, h4 | h2, h3)
STATE_PERMUTATION = (0, 3, 1, 2)

# valve-ratio operating range of the physical plant
VALVE_MIN, VALVE_MAX = 0.15, 0.8


@dataclass(frozen=True)
class QuadTankParams:
    """Laboratory parameters; defaults are the identified values."""

    tank_area: float = 0.02  # S, m^2
    discharge: tuple = (5.8e-5, 6.2e-5, 2.0e-5, 3.6e-5)  # a_i, m^2
    levels0: tuple = (0.19, 0.13, 0.23, 0.09)  # operating levels h_i^0, m
    pump_flow_a: float = 0.39  # q_a^max, m^3/h
    pump_flow_b: float = 0.39  # q_b^max, m^3/h
    gamma0: tuple = (0.58, 0.54)  # valve-ratio operating point
    gravity: float = 9.81  # m/s^2; not part of the identified set

    def __post_init__(self):
        if self.tank_area <= 0 or self.gravity <= 0:
            raise ValueError("tank area and gravity must be positive")
        if any(a <= 0 for a in self.discharge) or any(h <= 0 for h in self.levels0):
            raise ValueError("discharge constants and levels must be positive")
        if self.pump_flow_a <= 0 or self.pump_flow_b <= 0:
            raise ValueError("pump flows must be positive")
        if not all(0.0 <= g <= 1.0 for g in self.gamma0):
            raise ValueError("valve ratios must lie in [0, 1]")

    @property
    def flows_si(self) -> tuple[float, float]:
        """Pump flows in m^3/s."""
        return self.pump_flow_a / 3600.0, self.pump_flow_b / 3600.0

    @property
    def time_constants(self) -> tuple[float, ...]:
        """tau_i = (S / a_i) sqrt(2 h_i^0 / g), seconds."""
        return tuple((self.tank_area / a) * np.sqrt(2.0 * h / self.gravity)
                     for a, h in zip(self.discharge, self.levels0))


def quadtank_linearize(p: QuadTankParams):
    """Continuous-time (A_c, B_c, taus) at the operating point.

    States are level deviations x_i = h_i - h_i^0; inputs are valve-ratio
    deviations u_1 = gamma_a - gamma_a^0, u_2 = gamma_b - gamma_b^0.
    """
    tau = p.time_constants
    qa, qb = p.flows_si
    S = p.tank_area
    A = np.zeros((4, 4))
    for i in range(4):
        A[i, i] = -1.0 / tau[i]
    A[0, 3] = 1.0 / tau[3]
    A[1, 2] = 1.0 / tau[2]
    B = np.zeros((4, 2))
    B[0, 0] = qa / S
    B[1, 1] = qb / S
    B[2, 0] = -qa / S
    B[3, 1] = -qb / S
    return A, B, tau


def zoh_discretize(A_c, B_c, dt: float):
    """Exact zero-order-hold discretization via the augmented exponential.

    A_d = exp(A_c dt), B_d = (int_0^dt exp(A_c s) ds) B_c, computed from one
    Pade scaling-and-squaring exponential of [[A, B], [0, 0]] * dt.
    """
    if dt <= 0:
        raise ValueError("sampling time must be positive")
    A_c = np.asarray(A_c, dtype=float)
    B_c = np.asarray(B_c, dtype=float)
    n, m = B_c.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def quadtank_nonlinear_rhs(p: QuadTankParams, h, gamma) -> np.ndarray:
    """Level derivatives dh/dt of the four-tank model.

    Torricelli outflows a_i sqrt(2 g h_i); gamma_a routes pump a between
    tanks 1 and 3, gamma_b routes pump b between tanks 2 and 4.  Negative
    levels are clamped to zero (with a warning) before taking square roots.
    """
    h = np.asarray(h, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if h.shape != (4,) or gamma.shape != (2,):
        raise ValueError("need four levels and two valve ratios")
    if np.any(h < 0):
        warnings.warn("negative tank level clamped to zero")
        h = np.maximum(h, 0.0)
    a = p.discharge
    S = p.tank_area
    qa, qb = p.flows_si
    out = np.sqrt(2.0 * p.gravity * h)
    ga, gb = gamma
    return np.array([
        (-a[0] * out[0] + a[3] * out[3] + ga * qa) / S,
        (-a[1] * out[1] + a[2] * out[2] + gb * qb) / S,
        (-a[2] * out[2] + (1.0 - ga) * qa) / S,
        (-a[3] * out[3] + (1.0 - gb) * qb) / S,
    ])


def quadtank_system(p: QuadTankParams = QuadTankParams(), dt: float = 5.0,
                    horizon: int = 20, q_weight: float = 1.0,
                    r_weight: float = 0.01,
                    terminal_weights=None) -> tuple[NetworkSystem, MPCConfig]:
    """Partitioned discrete-time model plus its MPC configuration.

    Subsystem 1 holds (x1, x4) driven by u1 = gamma_a - gamma_a^0, subsystem
    2 holds (x2, x3) driven by u2; each pump also feeds the other subsystem,
    so all four B blocks are present while A stays block-diagonal.  The
    valve range [0.15, 0.8] becomes the box [0.15, 0.8] - gamma^0 per input.
    Default weights: Q^i = q_weight * I, R^i = r_weight * I; terminal
    weights default to each subsystem's own Riccati solution.
    """
    tau = p.time_constants
    qa, qb = p.flows_si
    S = p.tank_area
    # block 1: states (x1, x4); block 2: states (x2, x3)
    A1 = np.array([[-1.0 / tau[0], 1.0 / tau[3]], [0.0, -1.0 / tau[3]]])
    B1 = np.array([[qa / S, 0.0], [0.0, -qb / S]])
    A2 = np.array([[-1.0 / tau[1], 1.0 / tau[2]], [0.0, -1.0 / tau[2]]])
    B2 = np.array([[0.0, qb / S], [-qa / S, 0.0]])
    A1d, B1d = zoh_discretize(A1, B1, dt)
    A2d, B2d = zoh_discretize(A2, B2, dt)

    sys = NetworkSystem(
        state_sizes=(2, 2), input_sizes=(1, 1),
        A_blocks={(0, 0): A1d, (1, 1): A2d},
        B_blocks={(0, 0): B1d[:, :1], (0, 1): B1d[:, 1:],
                  (1, 0): B2d[:, :1], (1, 1): B2d[:, 1:]},
    )
    boxes = tuple(BoxSet(np.array([VALVE_MIN - g0]), np.array([VALVE_MAX - g0]))
                  for g0 in p.gamma0)
    Q = tuple(q_weight * np.eye(2) for _ in range(2))
    R = tuple(r_weight * np.eye(1) for _ in range(2))
    if terminal_weights is None:
        terminal_weights = []
        for i in range(2):
            P = solve_discrete_are(sys.A_blocks[(i, i)], sys.B_blocks[(i, i)],
                                   Q[i], R[i])
            terminal_weights.append(0.5 * (P + P.T))
    cfg = MPCConfig(horizon=horizon, state_weights=Q, input_weights=R,
                    terminal_weights=tuple(terminal_weights), input_boxes=boxes)
    return sys, cfg
