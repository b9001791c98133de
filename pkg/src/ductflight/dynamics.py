"""Rigid-body quadrotor model with duct disturbance forces.

The integrator state lives in plain Python floats inside :class:`Quadrotor`
because the closed-loop simulator calls it at 1 kHz; :func:`step` wraps it in
a functional interface on :class:`DroneState` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ThrustLimit
from .geometry import DuctShape, drone_clear_of_wall
from .sensors import GRAVITY


@dataclass(frozen=True)
class DroneParams:
    mass: float = 0.130
    span: float = 0.180
    height: float = 0.075
    inertia: Optional[tuple] = None
    max_thrust: Optional[float] = None
    arm_length: float = 0.052
    yaw_coeff: float = 0.006
    drag: float = 0.01

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.inertia is None:
            # solid disc of the drone's span
            r2 = (0.5 * self.span) ** 2
            object.__setattr__(self, "inertia", (self.mass * r2 / 4, self.mass * r2 / 4, self.mass * r2 / 2))
        if self.max_thrust is None:
            object.__setattr__(self, "max_thrust", 4.0 * self.mass * GRAVITY)
        if min(self.inertia) <= 0:
            raise ValueError("inertia must be positive")

    @property
    def rotor_max(self) -> float:
        return self.max_thrust / 4.0

    @property
    def moment_arm(self) -> float:
        """Per-axis lever arm of each rotor in the X configuration."""
        return self.arm_length / math.sqrt(2.0)

    @property
    def weight(self) -> float:
        return self.mass * GRAVITY


# rotor order: front-right, back-right, back-left, front-left
ROTOR_X = (1.0, -1.0, -1.0, 1.0)
ROTOR_Y = (-1.0, -1.0, 1.0, 1.0)
ROTOR_SPIN = (-1.0, 1.0, -1.0, 1.0)


def allocation_matrix(params: DroneParams) -> np.ndarray:
    """Maps per-rotor thrusts to (collective, tau_x, tau_y, tau_z)."""
    a, k = params.moment_arm, params.yaw_coeff
    return np.array([
        [1.0, 1.0, 1.0, 1.0],
        [a * y for y in ROTOR_Y],
        [-a * x for x in ROTOR_X],
        [k * s for s in ROTOR_SPIN],
    ])


def hover_trim(params: DroneParams) -> np.ndarray:
    """Equal rotor command whose total thrust balances the weight."""
    if params.weight > params.max_thrust:
        raise ThrustLimit(f"weight {params.weight:.3f} N exceeds max thrust {params.max_thrust:.3f} N")
    return np.full(4, math.sqrt(params.weight / params.max_thrust))


@dataclass
class DroneState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.eye(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.attitude = np.asarray(self.attitude, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)


class StepResult(NamedTuple):
    state: DroneState
    ou_state: np.ndarray
    disturbance: np.ndarray
    collision: bool


def _quat_from_matrix(R) -> tuple:
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    n = math.sqrt(sum(c * c for c in q))
    return tuple(float(c) / n for c in q)


class Quadrotor:
    """Mutable integrator state; positions in the axis-centered duct frame."""

    def __init__(self, params: DroneParams, state: Optional[DroneState] = None):
        self.params = params
        state = state or DroneState()
        self.px, self.py, self.pz = (float(c) for c in state.position)
        self.vx, self.vy, self.vz = (float(c) for c in state.velocity)
        self.qw, self.qx, self.qy, self.qz = _quat_from_matrix(state.attitude)
        self.wx, self.wy, self.wz = (float(c) for c in state.omega)
        self.ax, self.ay, self.az = (float(c) for c in state.accel)
        self.t = float(state.t)
        self._update_rotation()
        self._ixx, self._iyy, self._izz = params.inertia

    def _update_rotation(self):
        w, x, y, z = self.qw, self.qx, self.qy, self.qz
        self.r00 = 1 - 2 * (y * y + z * z)
        self.r01 = 2 * (x * y - w * z)
        self.r02 = 2 * (x * z + w * y)
        self.r10 = 2 * (x * y + w * z)
        self.r11 = 1 - 2 * (x * x + z * z)
        self.r12 = 2 * (y * z - w * x)
        self.r20 = 2 * (x * z - w * y)
        self.r21 = 2 * (y * z + w * x)
        self.r22 = 1 - 2 * (x * x + y * y)

    @property
    def attitude(self) -> np.ndarray:
        return np.array([[self.r00, self.r01, self.r02],
                         [self.r10, self.r11, self.r12],
                         [self.r20, self.r21, self.r22]])

    @property
    def roll(self) -> float:
        return math.atan2(self.r21, self.r22)

    @property
    def pitch(self) -> float:
        return -math.asin(max(-1.0, min(1.0, self.r20)))

    @property
    def yaw(self) -> float:
        return math.atan2(self.r10, self.r00)

    def state(self) -> DroneState:
        return DroneState(np.array([self.px, self.py, self.pz]), np.array([self.vx, self.vy, self.vz]),
                          self.attitude, np.array([self.wx, self.wy, self.wz]), self.t,
                          np.array([self.ax, self.ay, self.az]))

    def advance(self, cmd, fy: float, fz: float, dt: float) -> None:
        """One fixed step with rotor commands ``cmd`` and external force (0, fy, fz)."""
        p = self.params
        tm = p.rotor_max
        c0, c1, c2, c3 = (min(max(float(c), 0.0), 1.0) for c in cmd)
        t0, t1, t2, t3 = tm * c0 * c0, tm * c1 * c1, tm * c2 * c2, tm * c3 * c3
        thrust = t0 + t1 + t2 + t3
        a, k = p.moment_arm, p.yaw_coeff
        tau_x = a * (-t0 - t1 + t2 + t3)
        tau_y = -a * (t0 - t1 - t2 + t3)
        tau_z = k * (-t0 + t1 - t2 + t3)

        m = p.mass
        self.ax = (thrust * self.r02 - p.drag * self.vx) / m
        self.ay = (thrust * self.r12 - p.drag * self.vy + fy) / m
        self.az = (thrust * self.r22 - p.drag * self.vz + fz) / m - GRAVITY
        h = 0.5 * dt * dt
        # exact for accelerations held constant over the step
        self.px += self.vx * dt + self.ax * h
        self.py += self.vy * dt + self.ay * h
        self.pz += self.vz * dt + self.az * h
        self.vx += self.ax * dt
        self.vy += self.ay * dt
        self.vz += self.az * dt

        ixx, iyy, izz = self._ixx, self._iyy, self._izz
        wx, wy, wz = self.wx, self.wy, self.wz
        wx += dt * (tau_x - (izz - iyy) * wy * wz) / ixx
        wy += dt * (tau_y - (ixx - izz) * wz * wx) / iyy
        wz += dt * (tau_z - (iyy - ixx) * wx * wy) / izz
        self.wx, self.wy, self.wz = wx, wy, wz

        n = math.sqrt(wx * wx + wy * wy + wz * wz)
        if n > 0.0:
            half = 0.5 * n * dt
            s = math.sin(half) / n
            dw, dx, dy, dz = math.cos(half), wx * s, wy * s, wz * s
            qw, qx, qy, qz = self.qw, self.qx, self.qy, self.qz
            qw, qx, qy, qz = (qw * dw - qx * dx - qy * dy - qz * dz,
                              qw * dx + qx * dw + qy * dz - qz * dy,
                              qw * dy - qx * dz + qy * dw + qz * dx,
                              qw * dz + qx * dy - qy * dx + qz * dw)
            inv = 1.0 / math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
            self.qw, self.qx, self.qy, self.qz = qw * inv, qx * inv, qy * inv, qz * inv
            self._update_rotation()
        self.t += dt

    def clear_of_wall(self, duct: DuctShape) -> bool:
        p = self.params
        if not 0.0 <= self.px <= duct.length:
            return False
        return drone_clear_of_wall(duct, self.py, self.pz, self.roll, 0.5 * p.span, 0.5 * p.height)


class Disturbance:
    """Force-field mean plus Ornstein-Uhlenbeck fluctuation.

    The OU state ``u`` is kept whitened (unit stationary covariance); the
    applied fluctuation is ``L(p) u`` with ``L L^T`` the local cell covariance,
    so stationarity holds exactly at every position.
    """

    def __init__(self, field, tau: float = 0.5):
        self.field = field
        self.tau = tau

    def advance(self, u, y: float, z: float, dt: float, noise) -> tuple:
        fy, fz, cyy, cyz, czz = self.field.lookup_fast(y, z)
        e = math.exp(-dt / self.tau)
        g = math.sqrt(max(1.0 - e * e, 0.0))
        u0 = e * u[0] + g * noise[0]
        u1 = e * u[1] + g * noise[1]
        l00 = math.sqrt(max(cyy, 0.0))
        l10 = cyz / l00 if l00 > 0 else 0.0
        l11 = math.sqrt(max(czz - l10 * l10, 0.0))
        return fy + l00 * u0, fz + l10 * u0 + l11 * u1, (u0, u1)


def step(state: DroneState, cmd, params: DroneParams, field=None, ou_state=None,
         dt: float = 1e-3, rng: Optional[np.random.Generator] = None, duct: Optional[DuctShape] = None,
         tau: float = 0.5) -> StepResult:
    """Advance ``state`` by ``dt`` under rotor command ``cmd``.

    With a force field the disturbance is the interpolated cell mean plus an
    OU fluctuation (``ou_state``); the collision flag is raised when the drone
    footprint touches the wall of ``duct`` (defaults to the field's duct).
    """
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    quad = Quadrotor(params, state)
    ou = np.zeros(2) if ou_state is None else np.asarray(ou_state, dtype=float)
    fy = fz = 0.0
    if field is not None:
        noise = rng.standard_normal(2) if rng is not None else (0.0, 0.0)
        fy, fz, ou = Disturbance(field, tau).advance(ou, quad.py, quad.pz, dt, noise)
        ou = np.array(ou)
        duct = duct or field.duct
    quad.advance(cmd, fy, fz, dt)
    collision = duct is not None and not quad.clear_of_wall(duct)
    return StepResult(quad.state(), ou, np.array([fy, fz]), collision)
