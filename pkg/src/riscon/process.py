"""Linear-Gaussian plant dynamics and noisy sensor outputs.

Each plant evolves as x(t+1) = A x(t) + B u(t) + w(t) with w ~ N(0, W),
starting from x(0) ~ N(0, P0), and is observed through y = C x + v with
v ~ N(0, V). All matrices are dense; intended sizes are small (n, m, p
of order 10 or less).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYM_TOL = 1e-9
EIG_CLIP_TOL = 1e-12


def _as_matrix(x, rows=None, cols=None, name="matrix"):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if rows is not None and a.shape != (rows, cols):
        raise ValueError(f"{name} must be {rows}x{cols}, got {a.shape}")
    return a


def check_symmetric(a, name, tol=SYM_TOL):
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric within {tol}")


def check_spd(a, name, tol=SYM_TOL):
    """Symmetric positive definite, via eigenvalue test."""
    check_symmetric(a, name, tol)
    if np.linalg.eigvalsh(a).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")


def check_spsd(a, name, tol=SYM_TOL):
    """Symmetric positive semidefinite within tolerance."""
    check_symmetric(a, name, tol)
    scale = max(1.0, float(np.abs(a).max()))
    if np.linalg.eigvalsh(a).min() < -tol * scale:
        raise ValueError(f"{name} must be positive semidefinite")


def symmetrize(a):
    return 0.5 * (a + a.T)


def covariance_sqrt(cov):
    """Factor S with S S^T = cov, valid for singular covariances.

    Uses Cholesky when the matrix is strictly positive definite and falls
    back to an eigendecomposition with small negative eigenvalues clipped
    at zero otherwise.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(symmetrize(cov))
        vals = np.where(vals > EIG_CLIP_TOL, vals, 0.0)
        return vecs * np.sqrt(vals)


def sample_gaussian(cov, rng, size=None):
    """Zero-mean Gaussian draw(s) with the given covariance."""
    root = covariance_sqrt(cov)
    n = root.shape[0]
    if size is None:
        return root @ rng.standard_normal(n)
    return rng.standard_normal((size, n)) @ root.T


@dataclass(frozen=True)
class ProcessModel:
    """Per-plant LTI matrices, noise covariances, and cost weights."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray
    V: np.ndarray
    D: np.ndarray
    E: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        p = C.shape[0]
        W = _as_matrix(self.W, n, n, "W")
        V = _as_matrix(self.V, p, p, "V")
        D = _as_matrix(self.D, n, n, "D")
        E = _as_matrix(self.E, m, m, "E")
        P0 = _as_matrix(self.P0, n, n, "P0")
        check_spd(W, "W")
        check_spd(V, "V")
        check_spd(D, "D")
        check_spd(E, "E")
        check_spsd(P0, "P0")
        for name, val in (("A", A), ("B", B), ("C", C), ("W", W),
                          ("V", V), ("D", D), ("E", E), ("P0", P0)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @classmethod
    def scalar(cls, a, b=1.0, c=1.0, w=1.0, v=1.0, d=1.0, e=1.0, p0=1.0):
        """Convenience constructor for n = m = p = 1 plants."""
        mk = lambda x: np.array([[float(x)]])
        return cls(mk(a), mk(b), mk(c), mk(w), mk(v), mk(d), mk(e), mk(p0))


@dataclass
class PlantState:
    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))


def init_state(model: ProcessModel, rng) -> PlantState:
    """Draw the initial plant state x(0) ~ N(0, P0)."""
    return PlantState(x=sample_gaussian(model.P0, rng), t=0)


def step_process(state: PlantState, u, model: ProcessModel, rng) -> PlantState:
    """Advance one slot: x' = A x + B u + w with w ~ N(0, W)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.m,):
        raise ValueError(f"control must have shape ({model.m},), got {u.shape}")
    if state.x.shape != (model.n,):
        raise ValueError(f"state must have shape ({model.n},), got {state.x.shape}")
    w = sample_gaussian(model.W, rng)
    return PlantState(x=model.A @ state.x + model.B @ u + w, t=state.t + 1)


def measure(state: PlantState, model: ProcessModel, rng) -> np.ndarray:
    """Noisy sensor output y = C x + v with v ~ N(0, V)."""
    v = sample_gaussian(model.V, rng)
    return model.C @ state.x + v
