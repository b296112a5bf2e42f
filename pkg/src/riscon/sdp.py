"""Diagonally-constrained semidefinite programs over Hermitian matrices.

Solves  maximize  Re tr(Q Sigma)  over complex Hermitian Sigma >= 0 with
unit diagonal, the relaxation obtained from unit-modulus phase vectors
by dropping the rank-one constraint. The complex program is embedded
into a real symmetric one of twice the dimension ([Re -Im; Im Re]) and
solved with an augmented-Lagrangian splitting that alternates an exact
diagonal step with an eigendecomposition projection onto the PSD cone.
A Gaussian randomization step recovers a feasible phase vector from the
relaxed solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import PhaseVector


class SolverError(RuntimeError):
    pass


def hermitian_part(a):
    return 0.5 * (a + a.conj().T)


def complex_to_real_embedding(q: np.ndarray) -> np.ndarray:
    """[Re -Im; Im Re] embedding; doubles the dimension."""
    re, im = q.real, q.imag
    return np.block([[re, -im], [im, re]])


def real_to_complex(x: np.ndarray) -> np.ndarray:
    """Inverse embedding, averaging out the redundant block copy."""
    n = x.shape[0] // 2
    a = 0.5 * (x[:n, :n] + x[n:, n:])
    b = 0.5 * (x[n:, :n] - x[:n, n:])
    return hermitian_part(a + 1j * b)


def project_psd(x: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (x + x.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-6
    max_iterations: int = 5000
    penalty: float = 0.05            # for the objective normalized to unit norm
    adapt_every: int = 100           # rebalance cadence; adapting each step can cycle
    adapt_ratio: float = 10.0
    adapt_factor: float = 2.0


@dataclass
class SdpInstance:
    """Aggregated objective matrix of the per-slot phase relaxation.

    ``constants - Re tr(Q_bar Sigma)`` equals the weighted sum of the
    per-plant erasure bounds, so maximizing the trace term minimizes the
    lookahead objective.
    """

    Q_bar: np.ndarray
    weights: np.ndarray
    constants: float

    def __post_init__(self):
        q = np.asarray(self.Q_bar, dtype=complex)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("Q_bar must be square")
        scale = max(1.0, float(np.abs(q).max()))
        if np.abs(q - q.conj().T).max() > 1e-10 * scale:
            raise ValueError("Q_bar must be Hermitian")
        self.Q_bar = q
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))


@dataclass
class SdpSolution:
    Sigma: np.ndarray
    objective_value: float
    solver_iterations: int
    residuals: tuple
    converged: bool
    state: tuple | None = field(default=None, repr=False, compare=False)


def solve_sdp(
    instance: SdpInstance,
    config: SolverConfig | None = None,
    warm_start: SdpSolution | None = None,
) -> SdpSolution:
    """Solve the unit-diagonal SDP relaxation.

    Alternates (i) the exact minimizer over the unit-diagonal affine set,
    (ii) projection onto the PSD cone, and (iii) a scaled dual update,
    with the penalty rebalanced when the primal and dual residuals
    diverge. Non-convergence within the iteration cap returns the best
    iterate with ``converged=False``.
    """
    cfg = config or SolverConfig()
    scale = float(np.linalg.norm(instance.Q_bar))
    if scale == 0.0:
        # constant objective: every feasible point is optimal
        dim = instance.Q_bar.shape[0]
        return SdpSolution(
            Sigma=np.eye(dim, dtype=complex), objective_value=0.0,
            solver_iterations=0, residuals=(0.0, 0.0), converged=True,
        )
    # the feasible set is scale-invariant, so solve at unit objective norm
    c = complex_to_real_embedding(instance.Q_bar / scale)
    dim = c.shape[0]
    rho = cfg.penalty

    if warm_start is not None and warm_start.state is not None and warm_start.state[0].shape[0] == dim:
        x, z, u, rho = warm_start.state
        x, z, u = x.copy(), z.copy(), u.copy()
    else:
        x = np.eye(dim)
        z = np.eye(dim)
        u = np.zeros((dim, dim))

    eps = cfg.tolerance
    primal = dual = math.inf
    iterations = 0
    converged = False
    for iterations in range(1, cfg.max_iterations + 1):
        x = z - u + c / rho
        np.fill_diagonal(x, 1.0)
        z_prev = z
        z = project_psd(x + u)
        u = u + x - z
        primal = float(np.linalg.norm(x - z))
        dual = float(rho * np.linalg.norm(z - z_prev))
        eps_primal = dim * eps + eps * max(np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = dim * eps + eps * rho * np.linalg.norm(u)
        if primal <= eps_primal and dual <= eps_dual:
            converged = True
            break
        if iterations % cfg.adapt_every == 0:
            if primal > cfg.adapt_ratio * dual and rho < 1e4:
                rho *= cfg.adapt_factor
                u /= cfg.adapt_factor
            elif dual > cfg.adapt_ratio * primal and rho > 1e-4:
                rho /= cfg.adapt_factor
                u *= cfg.adapt_factor

    sigma = real_to_complex(z)
    diag = np.clip(sigma.diagonal().real, 1e-12, None)
    sigma = sigma / np.sqrt(np.outer(diag, diag))
    np.fill_diagonal(sigma, 1.0)
    objective = float(np.real(np.trace(instance.Q_bar @ sigma)))
    return SdpSolution(
        Sigma=sigma,
        objective_value=objective,
        solver_iterations=iterations,
        residuals=(primal, dual),
        converged=converged,
        state=(x, z, u, rho),
    )


def rank_one_objective(q_bar: np.ndarray, theta: PhaseVector) -> float:
    """Objective Re(theta~^H Q theta~) of the homogenized unit-modulus vector."""
    ttil = np.concatenate([theta.theta, [1.0 + 0.0j]])
    return float(np.real(np.conj(ttil) @ q_bar @ ttil))


def gaussian_randomization(
    solution: SdpSolution,
    instance: SdpInstance,
    trials: int,
    rng,
) -> PhaseVector:
    """Round the relaxed solution to unit-modulus phases.

    Draws zero-mean complex Gaussian vectors with covariance Sigma,
    normalizes every entry to unit modulus, and keeps the candidate with
    the best objective. Candidates are referenced to the homogenizing
    entry (the trailing coordinate is rotated to phase zero) so an exactly
    rank-one Sigma is recovered without loss.
    """
    if trials < 1:
        raise ValueError("need at least one randomization trial")
    sigma = solution.Sigma
    dim = sigma.shape[0]
    m = dim - 1
    vals, vecs = np.linalg.eigh(hermitian_part(sigma))
    vals = np.clip(vals, 0.0, None)
    if vals.max() > 0.0:
        # drop eigendecomposition noise so degenerate covariances stay degenerate
        vals[vals < 1e-12 * vals.max()] = 0.0
    factor = vecs * np.sqrt(vals)
    draws = (rng.standard_normal((trials, dim)) + 1j * rng.standard_normal((trials, dim)))
    draws = draws / math.sqrt(2.0)
    g = draws @ factor.T
    mags = np.abs(g)
    unit = np.where(mags > 0.0, g / np.where(mags > 0.0, mags, 1.0), 1.0 + 0.0j)
    candidates = unit[:, :m] * np.conj(unit[:, m])[:, None]
    homog = np.concatenate([candidates, np.ones((trials, 1), dtype=complex)], axis=1)
    values = np.real(np.einsum("ti,ij,tj->t", np.conj(homog), instance.Q_bar, homog))
    best = int(np.argmax(values))
    return PhaseVector.from_unit_complex(candidates[best])
