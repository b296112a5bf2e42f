"""Finite-horizon LQR: backward Riccati recursion, gains, cost accounting.

The value matrices Omega(t) run backward from the terminal condition
Omega(T) = D (states are charged up to T, controls up to T-1). The
associated weight matrices F(t) price the controller-side estimation
error in the expected-cost decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import ExpectedCovariance
from .process import ProcessModel, symmetrize


@dataclass
class RiccatiSchedule:
    """Value matrices Omega(0..T), gains L(0..T-1), and weights F(0..T-1)."""

    Omega: list
    L: list
    F: list

    @property
    def horizon(self):
        return len(self.Omega) - 1


def riccati_backward(model: ProcessModel, T: int) -> RiccatiSchedule:
    """Backward recursion from Omega(T) = D.

    Omega(t) = A^T Omega(t+1) A + D
               - A^T Omega(t+1) B (B^T Omega(t+1) B + E)^-1 B^T Omega(t+1) A
    L(t) = -(B^T Omega(t+1) B + E)^-1 B^T Omega(t+1) A
    F(t) = A^T Omega(t+1) A + D - Omega(t)
    """
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    if model.n == 1 and model.m == 1:
        return _riccati_backward_scalar(model, T)
    A, B, D, E = model.A, model.B, model.D, model.E
    Omega = [None] * (T + 1)
    L = [None] * T
    F = [None] * T
    Omega[T] = D.copy()
    for t in range(T - 1, -1, -1):
        Om_next = Omega[t + 1]
        G = B.T @ Om_next @ B + E
        # G is SPD since E is; use a symmetric solve via Cholesky.
        cho = np.linalg.cholesky(symmetrize(G))
        rhs = B.T @ Om_next @ A
        gain = -np.linalg.solve(cho.T, np.linalg.solve(cho, rhs))
        lyap = A.T @ Om_next @ A + D
        Omega[t] = symmetrize(lyap + rhs.T @ gain)
        L[t] = gain
        F[t] = symmetrize(lyap - Omega[t])
    return RiccatiSchedule(Omega=Omega, L=L, F=F)


def _riccati_backward_scalar(model: ProcessModel, T: int) -> RiccatiSchedule:
    # plain-float recursion; LAPACK call overhead dominates at n = m = 1
    a = float(model.A[0, 0])
    b = float(model.B[0, 0])
    d = float(model.D[0, 0])
    e = float(model.E[0, 0])
    omega = [0.0] * (T + 1)
    gains = [0.0] * T
    fvals = [0.0] * T
    omega[T] = d
    for t in range(T - 1, -1, -1):
        om = omega[t + 1]
        gain = -(b * om * a) / (b * om * b + e)
        lyap = a * om * a + d
        omega[t] = lyap + a * om * b * gain
        gains[t] = gain
        fvals[t] = lyap - omega[t]
    wrap = lambda v: np.array([[v]])
    return RiccatiSchedule(
        Omega=[wrap(v) for v in omega],
        L=[wrap(v) for v in gains],
        F=[wrap(v) for v in fvals],
    )


def control_action(gain, x_hat_c) -> np.ndarray:
    """Certainty-equivalent control u = L x_hat_c."""
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    x_hat_c = np.atleast_1d(np.asarray(x_hat_c, dtype=float))
    if gain.shape[1] != x_hat_c.shape[0]:
        raise ValueError(f"gain {gain.shape} incompatible with estimate {x_hat_c.shape}")
    return gain @ x_hat_c


def realized_cost(states, controls, model: ProcessModel) -> float:
    """Quadratic trajectory cost: sum_t x' D x + sum_t u' E u.

    ``states`` spans t = 0..T and ``controls`` t = 0..T-1.
    """
    states = [np.atleast_1d(np.asarray(x, dtype=float)) for x in states]
    controls = [np.atleast_1d(np.asarray(u, dtype=float)) for u in controls]
    if len(states) != len(controls) + 1:
        raise ValueError(
            f"expected len(states) == len(controls) + 1, got {len(states)} and {len(controls)}"
        )
    cost = 0.0
    for x in states:
        cost += float(x @ model.D @ x)
    for u in controls:
        cost += float(u @ model.E @ u)
    return cost


def stage_cost(x, u, model: ProcessModel) -> float:
    """Single-slot cost x' D x + u' E u (pass u=None for the terminal slot)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cost = float(x @ model.D @ x)
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        cost += float(u @ model.E @ u)
    return cost


def cost_to_come(
    schedule: RiccatiSchedule,
    P_bar_traj,
    model: ProcessModel,
    s: int,
) -> float:
    """Expected-cost decomposition truncated at slot s, single plant.

    tr(Omega(0) P0) + sum_{t'=0}^{s} tr(Omega(t'+1) W)
                    + sum_{t'=0}^{s} tr(F(t') P_bar(t'|t')).

    The convention s = -1 keeps only the prior term. ``P_bar_traj`` holds
    the expected controller covariances for slots 0..s (ExpectedCovariance
    or plain arrays).
    """
    if s > schedule.horizon - 1:
        raise ValueError(f"s={s} exceeds horizon-1={schedule.horizon - 1}")
    total = float(np.trace(schedule.Omega[0] @ model.P0))
    for t in range(s + 1):
        P_bar = P_bar_traj[t]
        if isinstance(P_bar, ExpectedCovariance):
            P_bar = P_bar.P_bar_c
        total += float(np.trace(schedule.Omega[t + 1] @ model.W))
        total += float(np.trace(schedule.F[t] @ np.atleast_2d(P_bar)))
    return total
