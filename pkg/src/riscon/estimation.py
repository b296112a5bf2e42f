"""State estimation on both sides of the lossy link.

The sensor runs a standard Kalman filter on its own measurements. The
controller either adopts the received sensor estimate or propagates its
previous estimate through the model when the packet is erased. The
expected controller-side error covariance admits a deterministic
recursion in the erasure probability, which is what the phase optimizer
tracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .process import ProcessModel, symmetrize


class EstimationError(RuntimeError):
    pass


@dataclass
class SensorFilterState:
    """Kalman filter state at the sensor.

    Prediction fields refer to the current slot (before the measurement
    update), posterior fields to the latest completed update.
    """

    x_hat_s: np.ndarray
    P_s: np.ndarray
    x_hat_pred: np.ndarray
    P_pred: np.ndarray


@dataclass
class ControllerEstimate:
    x_hat_c: np.ndarray
    last_delta: int = 1


@dataclass
class ExpectedCovariance:
    P_bar_c: np.ndarray


def sensor_filter_init(model: ProcessModel) -> SensorFilterState:
    """Filter state before the first measurement: prior N(0, P0)."""
    n = model.n
    return SensorFilterState(
        x_hat_s=np.zeros(n),
        P_s=model.P0.copy(),
        x_hat_pred=np.zeros(n),
        P_pred=model.P0.copy(),
    )


def kf_predict(filter_state: SensorFilterState, u, model: ProcessModel) -> SensorFilterState:
    """Time update: propagate the posterior through the dynamics."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x_pred = model.A @ filter_state.x_hat_s + model.B @ u
    P_pred = symmetrize(model.A @ filter_state.P_s @ model.A.T + model.W)
    return SensorFilterState(
        x_hat_s=filter_state.x_hat_s,
        P_s=filter_state.P_s,
        x_hat_pred=x_pred,
        P_pred=P_pred,
    )


def kf_update(filter_state: SensorFilterState, y, model: ProcessModel) -> SensorFilterState:
    """Measurement update in gain form.

    P_s = (I - K C) P_pred with K = P_pred C^T (C P_pred C^T + V)^-1,
    numerically equivalent to the information form
    (P_pred^-1 + C^T V^-1 C)^-1.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    P_pred = filter_state.P_pred
    S = model.C @ P_pred @ model.C.T + model.V
    try:
        K = np.linalg.solve(S.T, (P_pred @ model.C.T).T).T
    except np.linalg.LinAlgError as exc:
        raise EstimationError("innovation covariance is singular") from exc
    innovation = y - model.C @ filter_state.x_hat_pred
    x_post = filter_state.x_hat_pred + K @ innovation
    P_post = symmetrize((np.eye(model.n) - K @ model.C) @ P_pred)
    return SensorFilterState(
        x_hat_s=x_post,
        P_s=P_post,
        x_hat_pred=filter_state.x_hat_pred,
        P_pred=P_pred,
    )


def kf_posterior_schedule(model: ProcessModel, horizon: int) -> list[np.ndarray]:
    """Posterior covariances P_s(t|t) for t = 0..horizon-1.

    The covariance recursion does not depend on the data, so the schedule
    can be computed once per plant.
    """
    out = []
    P_pred = model.P0.copy()
    for _ in range(horizon):
        S = model.C @ P_pred @ model.C.T + model.V
        K = np.linalg.solve(S.T, (P_pred @ model.C.T).T).T
        P_post = symmetrize((np.eye(model.n) - K @ model.C) @ P_pred)
        out.append(P_post)
        P_pred = symmetrize(model.A @ P_post @ model.A.T + model.W)
    return out


def controller_update(
    prev: ControllerEstimate,
    delta: int,
    x_hat_s,
    model: ProcessModel,
    u_prev,
    literal_propagation: bool = False,
) -> ControllerEstimate:
    """Controller-side estimate under the erasure outcome delta.

    On a delivered packet the controller adopts the sensor estimate. On a
    loss it propagates its previous estimate; by default the known last
    control enters the propagation (x <- A x + B u_prev), while
    ``literal_propagation`` drops the input term (x <- A x).
    """
    if delta not in (0, 1):
        raise ValueError(f"delta must be 0 or 1, got {delta}")
    if delta == 1:
        x_new = np.atleast_1d(np.asarray(x_hat_s, dtype=float)).copy()
    else:
        x_new = model.A @ prev.x_hat_c
        if not literal_propagation:
            u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
            x_new = x_new + model.B @ u_prev
    return ControllerEstimate(x_hat_c=x_new, last_delta=delta)


def replicate_controller_estimate(
    replica_prev: ControllerEstimate,
    ack: int,
    x_hat_s,
    model: ProcessModel,
    u_prev,
    literal_propagation: bool = False,
) -> ControllerEstimate:
    """Sensor-side replica of the controller estimate, driven by acks.

    Runs the exact same arithmetic path as ``controller_update``, so with
    a faithful ack stream the replica matches the controller bitwise and
    the sensor can reconstruct the applied controls.
    """
    return controller_update(replica_prev, ack, x_hat_s, model, u_prev,
                             literal_propagation=literal_propagation)


def expected_cov_step(
    P_bar_prev: ExpectedCovariance,
    P_s_posterior,
    p_err: float,
    model: ProcessModel,
) -> ExpectedCovariance:
    """One step of the expected controller-covariance recursion.

    Returns P_s + (A P_bar A^T + W - P_s) * p_err: on delivery the
    controller inherits the sensor posterior, on a loss the previous
    expected covariance propagates through the dynamics.
    """
    if not 0.0 <= p_err <= 1.0:
        raise ValueError(f"p_err must lie in [0, 1], got {p_err}")
    P_s = np.atleast_2d(np.asarray(P_s_posterior, dtype=float))
    propagated = model.A @ P_bar_prev.P_bar_c @ model.A.T + model.W
    return ExpectedCovariance(symmetrize(P_s + (propagated - P_s) * p_err))


def expected_cov_first(P_s_posterior, p_err: float, model: ProcessModel) -> ExpectedCovariance:
    """Expected covariance at the first slot.

    Before any packet the controller holds the zero-mean prior, so the
    loss branch is the prior covariance P0 rather than a propagated one.
    """
    if not 0.0 <= p_err <= 1.0:
        raise ValueError(f"p_err must lie in [0, 1], got {p_err}")
    P_s = np.atleast_2d(np.asarray(P_s_posterior, dtype=float))
    return ExpectedCovariance(symmetrize(P_s + (model.P0 - P_s) * p_err))


def expected_cov_trajectory(
    model: ProcessModel,
    p_err_seq,
    P_s_schedule=None,
) -> list[ExpectedCovariance]:
    """Expected covariances for slots 0..len(p_err_seq)-1.

    ``p_err_seq`` may be a scalar (held constant) or a per-slot sequence.
    """
    p_err_seq = np.atleast_1d(np.asarray(p_err_seq, dtype=float))
    horizon = len(p_err_seq)
    if P_s_schedule is None:
        P_s_schedule = kf_posterior_schedule(model, horizon)
    traj = [expected_cov_first(P_s_schedule[0], p_err_seq[0], model)]
    for t in range(1, horizon):
        traj.append(expected_cov_step(traj[-1], P_s_schedule[t], p_err_seq[t], model))
    return traj


def realized_cov_step(P_prev, delta: int, P_s_posterior, model: ProcessModel):
    """Realized controller covariance for a single erasure outcome."""
    if delta == 1:
        return np.atleast_2d(np.asarray(P_s_posterior, dtype=float)).copy()
    return symmetrize(model.A @ P_prev @ model.A.T + model.W)
