"""Cross-section Kalman filter on [y, z, vy, vz].

Prediction integrates the IMU's specific force rotated to the world frame;
updates take (y, z) position fixes from the learned localizer or a tracking
system.  The model is linear, so the "extended" filter reduces to the
standard equations here.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import NumericalFault
from ..sensors import GRAVITY

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass
class EkfState:
    mean: np.ndarray
    cov: np.ndarray
    accel_sigma: float = 0.05
    meas_sigma: float = 0.005
    nis: Optional[float] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)

    @classmethod
    def at(cls, y: float, z: float, vy: float = 0.0, vz: float = 0.0, sigma_p: float = 0.01,
           sigma_v: float = 0.05, **kw) -> "EkfState":
        return cls(np.array([y, z, vy, vz]), np.diag([sigma_p**2, sigma_p**2, sigma_v**2, sigma_v**2]), **kw)

    @property
    def R(self) -> np.ndarray:
        return np.eye(2) * self.meas_sigma**2


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, accel_sigma: float) -> np.ndarray:
    G = np.array([[0.5 * dt * dt, 0.0], [0.0, 0.5 * dt * dt], [dt, 0.0], [0.0, dt]])
    return accel_sigma**2 * (G @ G.T)


def world_accel_yz(specific_force, attitude) -> np.ndarray:
    a = np.asarray(attitude) @ np.asarray(specific_force, dtype=float)
    return np.array([a[1], a[2] - GRAVITY])


def ekf_predict(state: EkfState, imu, attitude, dt: float) -> EkfState:
    """Propagate with the accelerometer sample ``imu`` held over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = world_accel_yz(imu.accel, attitude)
    m = state.mean
    mean = np.array([m[0] + m[2] * dt + 0.5 * a[0] * dt * dt,
                     m[1] + m[3] * dt + 0.5 * a[1] * dt * dt,
                     m[2] + a[0] * dt,
                     m[3] + a[1] * dt])
    F = transition(dt)
    P = F @ state.cov @ F.T + process_noise(dt, state.accel_sigma)
    return replace(state, mean=mean, cov=0.5 * (P + P.T), nis=None)


def ekf_update(state: EkfState, measurement, R: Optional[np.ndarray] = None) -> EkfState:
    """Position fix update; the returned state carries the innovation's NIS."""
    z = np.asarray(measurement, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    R = state.R if R is None else np.asarray(R, dtype=float)
    P = state.cov
    S = H @ P @ H.T + R
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalFault("innovation covariance is not positive definite") from exc
    nu = z - state.mean[:2]
    Sinv = np.linalg.inv(S)
    K = P @ H.T @ Sinv
    mean = state.mean + K @ nu
    IKH = np.eye(4) - K @ H
    # Joseph form keeps P positive semi-definite for any gain
    P = IKH @ P @ IKH.T + K @ R @ K.T
    w = np.linalg.solve(L, nu)
    return replace(state, mean=mean, cov=0.5 * (P + P.T), nis=float(w @ w))
