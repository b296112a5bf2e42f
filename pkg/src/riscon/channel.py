"""Rician fading links, cascade channels, SINR outcomes, and link statistics.

Geometry convention: the reflecting surface sits at the origin of a 2-D
plane; sensors and controllers are points. Each link carries an
amplitude path gain d^(-alpha/2) (relative to a reference gain at 1 m)
and a Rician small-scale coefficient

    sqrt(kappa/(kappa+1)) * LOS + sqrt(1/(kappa+1)) * CN(0, 1),

drawn independently per slot (block fading). LOS phases follow the
geometric angle of the link: half-wavelength array steering across the
M surface elements, a single angle-derived phase for the direct link.

The cascade channel for the pair (l, k) is H_lk[i] = conj(h_sr_l[i]) *
h_rc_k[i]; the reflected path contributes sum_i theta_i H_lk[i] on top of
the direct coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhaseVector:
    """M surface phase shifts and their unit-modulus reflection coefficients."""

    phi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        theta = np.atleast_1d(np.asarray(self.theta, dtype=complex))
        if phi.shape != theta.shape:
            raise ValueError("phi and theta must have equal length")
        if np.abs(np.abs(theta) - 1.0).max() > 1e-12:
            raise ValueError("theta entries must have unit modulus")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)

    def __len__(self):
        return self.phi.shape[0]

    @classmethod
    def from_phases(cls, phi) -> "PhaseVector":
        phi = np.mod(np.atleast_1d(np.asarray(phi, dtype=float)), TWO_PI)
        return cls(phi=phi, theta=np.exp(1j * phi))

    @classmethod
    def from_unit_complex(cls, theta) -> "PhaseVector":
        theta = np.atleast_1d(np.asarray(theta, dtype=complex))
        mags = np.abs(theta)
        if np.any(mags == 0.0):
            raise ValueError("cannot derive phases from zero entries")
        return cls.from_phases(np.mod(np.angle(theta / mags), TWO_PI))


def _steering(angle: float, m: int) -> np.ndarray:
    # Half-wavelength uniform array response across the surface elements.
    idx = np.arange(m)
    return np.exp(1j * math.pi * idx * math.sin(angle))


@dataclass(frozen=True)
class ChannelStatistics:
    """Large-scale gains, LOS components, and Rician parameters of all links."""

    sensor_positions: np.ndarray
    controller_positions: np.ndarray
    M: int
    rician_k: float = 2.0
    alpha_direct: float = 3.5
    alpha_ris: float = 2.2
    reference_gain: float = 1.0
    direct_amp: np.ndarray = field(init=False, repr=False)
    direct_los: np.ndarray = field(init=False, repr=False)
    sr_amp: np.ndarray = field(init=False, repr=False)
    sr_los: np.ndarray = field(init=False, repr=False)
    rc_amp: np.ndarray = field(init=False, repr=False)
    rc_los: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sensors = np.atleast_2d(np.asarray(self.sensor_positions, dtype=float))
        controllers = np.atleast_2d(np.asarray(self.controller_positions, dtype=float))
        if sensors.shape[1] != 2 or controllers.shape[1] != 2:
            raise ValueError("positions must be 2-D points")
        if sensors.shape[0] != controllers.shape[0]:
            raise ValueError("need one controller per sensor")
        if self.M < 1:
            raise ValueError("surface must have at least one element")
        if self.rician_k < 0:
            raise ValueError("Rician K-factor must be nonnegative")
        if self.reference_gain < 0:
            raise ValueError("reference gain must be nonnegative")
        d_sr = np.linalg.norm(sensors, axis=1)
        d_rc = np.linalg.norm(controllers, axis=1)
        if np.any(d_sr == 0.0) or np.any(d_rc == 0.0):
            raise ValueError("positions must be distinct from the surface origin")
        K = sensors.shape[0]
        diff = controllers[None, :, :] - sensors[:, None, :]
        d_sc = np.linalg.norm(diff, axis=2)
        if np.any(d_sc == 0.0):
            raise ValueError("sensor and controller positions must be distinct")
        direct_amp = self.reference_gain * d_sc ** (-self.alpha_direct / 2.0)
        angle_sc = np.arctan2(diff[:, :, 1], diff[:, :, 0])
        direct_los = np.exp(1j * math.pi * np.sin(angle_sc))
        sr_amp = self.reference_gain * d_sr ** (-self.alpha_ris / 2.0)
        rc_amp = self.reference_gain * d_rc ** (-self.alpha_ris / 2.0)
        sr_los = np.zeros((K, self.M), dtype=complex)
        rc_los = np.zeros((K, self.M), dtype=complex)
        for k in range(K):
            sr_los[k] = _steering(math.atan2(sensors[k, 1], sensors[k, 0]), self.M)
            rc_los[k] = _steering(math.atan2(controllers[k, 1], controllers[k, 0]), self.M)
        object.__setattr__(self, "sensor_positions", sensors)
        object.__setattr__(self, "controller_positions", controllers)
        object.__setattr__(self, "direct_amp", direct_amp)
        object.__setattr__(self, "direct_los", direct_los)
        object.__setattr__(self, "sr_amp", sr_amp)
        object.__setattr__(self, "sr_los", sr_los)
        object.__setattr__(self, "rc_amp", rc_amp)
        object.__setattr__(self, "rc_los", rc_los)

    @property
    def K(self):
        return self.sensor_positions.shape[0]

    def _mix_weights(self):
        if math.isinf(self.rician_k):
            return 1.0, 0.0
        return (
            math.sqrt(self.rician_k / (self.rician_k + 1.0)),
            math.sqrt(1.0 / (self.rician_k + 1.0)),
        )

    def los_cascade(self, l: int, k: int) -> np.ndarray:
        """Deterministic cascade component, including the Rician mix weight."""
        los_w, _ = self._mix_weights()
        h_sr = self.sr_amp[l] * los_w * self.sr_los[l]
        h_rc = self.rc_amp[k] * los_w * self.rc_los[k]
        return np.conj(h_sr) * h_rc


@dataclass
class ChannelRealization:
    h_sc: np.ndarray
    h_sr: np.ndarray
    h_rc: np.ndarray
    slot: int = 0


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _sample_batch(stats: ChannelStatistics, rng, count: int):
    """Vectorized draws: h_sc (count,K,K), h_sr (count,K,M), h_rc (count,K,M)."""
    K, M = stats.K, stats.M
    los_w, sc_w = stats._mix_weights()
    h_sc = stats.direct_amp * (
        los_w * stats.direct_los + sc_w * _complex_normal(rng, (count, K, K))
    )
    h_sr = stats.sr_amp[:, None] * (
        los_w * stats.sr_los + sc_w * _complex_normal(rng, (count, K, M))
    )
    h_rc = stats.rc_amp[:, None] * (
        los_w * stats.rc_los + sc_w * _complex_normal(rng, (count, K, M))
    )
    return h_sc, h_rc, h_sr


def sample_realization(stats: ChannelStatistics, rng, slot: int = 0) -> ChannelRealization:
    """Draw one slot of all links, i.i.d. across slots."""
    h_sc, h_rc, h_sr = _sample_batch(stats, rng, 1)
    return ChannelRealization(h_sc=h_sc[0], h_sr=h_sr[0], h_rc=h_rc[0], slot=slot)


def cascade(h_sr_l, h_rc_k) -> np.ndarray:
    """Elementwise cascade H[i] = conj(h_sr_l[i]) * h_rc_k[i]."""
    h_sr_l = np.atleast_1d(np.asarray(h_sr_l, dtype=complex))
    h_rc_k = np.atleast_1d(np.asarray(h_rc_k, dtype=complex))
    if h_sr_l.shape != h_rc_k.shape:
        raise ValueError("cascade operands must have equal length")
    return np.conj(h_sr_l) * h_rc_k


def effective_gain(h_sc_lk, H_lk, theta: PhaseVector) -> complex:
    """Combined coefficient h_sc + sum_i theta_i H[i]."""
    return complex(h_sc_lk + np.dot(theta.theta, np.asarray(H_lk, dtype=complex)))


def _signal_powers(realization: ChannelRealization, theta: PhaseVector):
    """(K, K) array of |g_lk|^2 for the given phases."""
    reflected = np.einsum(
        "li,ki,i->lk", np.conj(realization.h_sr), realization.h_rc, theta.theta
    )
    g = realization.h_sc + reflected
    return np.abs(g) ** 2


def sinr_and_outcome(
    realization: ChannelRealization,
    theta: PhaseVector,
    k: int,
    rate: float,
    noise: float,
):
    """SINR at controller k and the packet outcome for rate R_k.

    Unit transmit powers on all sensors. The slot succeeds (delta = 1)
    when log2(1 + sinr) >= rate; equality counts as success.
    """
    if noise <= 0:
        raise ValueError("noise power must be positive")
    powers = _signal_powers(realization, theta)
    S = powers[k, k]
    I = powers[:, k].sum() - S
    sinr = S / (I + noise)
    delta = 1 if math.log2(1.0 + sinr) >= rate else 0
    return float(sinr), delta


@dataclass
class MomentSet:
    """Second-order link statistics per (l, k) pair.

    E_HH[l, k] = E[H_lk H_lk^H]        (M x M, Hermitian PSD)
    E_Hh[l, k] = E[H_lk conj(h_sc_lk)] (M,)
    E_hh[l, k] = E[|h_sc_lk|^2]        scalar
    """

    E_HH: np.ndarray
    E_Hh: np.ndarray
    E_hh: np.ndarray
    sample_count: int

    def __post_init__(self):
        if np.any(self.E_hh < 0):
            raise ValueError("mean squared direct gains must be nonnegative")
        K = self.E_hh.shape[0]
        for l in range(K):
            for k in range(K):
                block = self.E_HH[l, k]
                scale = max(1.0, float(np.abs(block).max()))
                if np.abs(block - block.conj().T).max() > 1e-9 * scale:
                    raise ValueError(f"E_HH[{l},{k}] is not Hermitian")
                if np.linalg.eigvalsh(block).min() < -1e-9 * scale:
                    raise ValueError(f"E_HH[{l},{k}] is not positive semidefinite")

    @property
    def K(self):
        return self.E_hh.shape[0]

    @property
    def M(self):
        return self.E_HH.shape[-1]


_MOMENT_CHUNK = 20000


def estimate_moments(stats: ChannelStatistics, samples: int, rng) -> MomentSet:
    """Monte-Carlo estimates of the second-order statistics."""
    if samples < 1:
        raise ValueError("need at least one sample")
    K, M = stats.K, stats.M
    E_HH = np.zeros((K, K, M, M), dtype=complex)
    E_Hh = np.zeros((K, K, M), dtype=complex)
    E_hh = np.zeros((K, K))
    done = 0
    while done < samples:
        count = min(_MOMENT_CHUNK, samples - done)
        h_sc, h_rc, h_sr = _sample_batch(stats, rng, count)
        for l in range(K):
            for k in range(K):
                H = np.conj(h_sr[:, l, :]) * h_rc[:, k, :]
                E_HH[l, k] += np.einsum("bi,bj->ij", H, np.conj(H))
                E_Hh[l, k] += H.T @ np.conj(h_sc[:, l, k])
                E_hh[l, k] += float((np.abs(h_sc[:, l, k]) ** 2).sum())
        done += count
    E_HH /= samples
    E_Hh /= samples
    E_hh /= samples
    for l in range(K):
        for k in range(K):
            E_HH[l, k] = 0.5 * (E_HH[l, k] + E_HH[l, k].conj().T)
    return MomentSet(E_HH=E_HH, E_Hh=E_Hh, E_hh=E_hh, sample_count=samples)


def phase_free_signal_bound(h_sc_kk, H_kk) -> float:
    """(|h_sc| + sum_i |H_i|)^2, an upper bound on S_k over all phases."""
    return float((np.abs(h_sc_kk) + np.abs(np.asarray(H_kk)).sum()) ** 2)


def estimate_gamma(
    stats: ChannelStatistics,
    rate: float,
    samples: int,
    rng,
    margin: float = 0.1,
) -> np.ndarray:
    """Per-plant estimate of the peak of S_k - (2^R - 1) I_k.

    Returns (1 + margin) times the sampled maximum of the phase-free
    signal bound on the own link. The bound drops the nonnegative
    interference term, so it dominates the target quantity for every
    phase choice; ``rate`` is part of that quantity's definition but does
    not enter the estimator.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    K = stats.K
    best = np.zeros(K)
    done = 0
    while done < samples:
        count = min(_MOMENT_CHUNK, samples - done)
        h_sc, h_rc, h_sr = _sample_batch(stats, rng, count)
        for k in range(K):
            H = np.conj(h_sr[:, k, :]) * h_rc[:, k, :]
            bound = (np.abs(h_sc[:, k, k]) + np.abs(H).sum(axis=1)) ** 2
            best[k] = max(best[k], float(bound.max()))
        done += count
    return (1.0 + margin) * best


def estimate_outage(
    stats: ChannelStatistics,
    theta: PhaseVector,
    rates,
    noise: float,
    samples: int,
    rng,
) -> np.ndarray:
    """Empirical erasure frequency per plant at fixed phases."""
    if samples < 1:
        raise ValueError("need at least one sample")
    K = stats.K
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (K,))
    thresholds = noise * (2.0 ** rates - 1.0)
    failures = np.zeros(K)
    done = 0
    while done < samples:
        count = min(_MOMENT_CHUNK, samples - done)
        h_sc, h_rc, h_sr = _sample_batch(stats, rng, count)
        reflected = np.einsum("bli,bki,i->blk", np.conj(h_sr), h_rc, theta.theta)
        powers = np.abs(h_sc + reflected) ** 2
        for k in range(K):
            S = powers[:, k, k]
            I = powers[:, :, k].sum(axis=1) - S
            margin_k = S - (2.0 ** rates[k] - 1.0) * I
            failures[k] += int((margin_k < thresholds[k]).sum())
        done += count
    return failures / samples
