"""Closed-form localisation from ToF ranges in a circular duct.

Every wall hit O_i = O_B + d_i s_i satisfies O_iy^2 + O_iz^2 = r^2.
Subtracting that constraint for two channels i, j eliminates r and leaves
one linear equation in (O_By, O_Bz):

    b_ij * y + c_ij * z = a_ij
    a_ij = d_j^2 (s_jy^2 + s_jz^2) - d_i^2 (s_iy^2 + s_iz^2)
    b_ij = 2 (d_i s_iy - d_j s_jy)
    c_ij = 2 (d_i s_iz - d_j s_jz)

Stacking all usable pairs gives an over-determined system solved in the
least-squares sense with the normal equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ..errors import Underdetermined
from ..sensors import ESTIMATOR_CHANNELS

_COND_LIMIT = 1e12


@dataclass
class GeometricProblem:
    radius: float
    distances: np.ndarray  # per channel, 0 = no reading
    directions: np.ndarray  # (n, 3) body-frame unit vectors of the same channels
    attitude: np.ndarray  # R_WB, body -> world

    @property
    def usable(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.distances) > 0)


class GeometricSolution(NamedTuple):
    y: float
    z: float
    inside: bool
    bad_geometry: bool


_pair_cache: dict = {}


def _pairs(n: int):
    p = _pair_cache.get(n)
    if p is None:
        p = _pair_cache[n] = np.triu_indices(n, 1)
    return p


def pair_system(p: GeometricProblem) -> tuple[np.ndarray, np.ndarray]:
    """Return (M, A) with rows (b_k, c_k) and a_k for every usable pair."""
    idx = p.usable
    d = np.asarray(p.distances, dtype=float)[idx]
    s = np.asarray(p.directions, dtype=float)[idx] @ np.asarray(p.attitude).T
    i, j = _pairs(len(idx))
    dy, dz = d * s[:, 1], d * s[:, 2]
    q = dy * dy + dz * dz
    A = q[j] - q[i]
    M = np.column_stack([2.0 * (dy[i] - dy[j]), 2.0 * (dz[i] - dz[j])])
    return M, A


def solve_geometric(p: GeometricProblem) -> GeometricSolution:
    if len(p.usable) < 2:
        raise Underdetermined(f"{len(p.usable)} usable channel(s)")
    M, A = pair_system(p)
    MtM = M.T @ M
    half_tr = 0.5 * (MtM[0, 0] + MtM[1, 1])
    spread = np.hypot(0.5 * (MtM[0, 0] - MtM[1, 1]), MtM[0, 1])
    lo, hi = half_tr - spread, half_tr + spread
    if not hi > 0 or lo <= hi / _COND_LIMIT:
        raise Underdetermined("pair matrix is rank deficient")
    y, z = np.linalg.solve(MtM, M.T @ A)
    rho = float(np.hypot(y, z))
    return GeometricSolution(float(y), float(z), rho < p.radius, rho - p.radius > p.radius)


def problem_from_frame(distances, attitude, radius: float, directions: np.ndarray,
                       channels: Sequence[int] = ESTIMATOR_CHANNELS) -> GeometricProblem:
    """Build a problem from a full 10-channel reading (up channel excluded by default)."""
    ch = list(channels)
    return GeometricProblem(radius, np.asarray(distances, dtype=float)[ch],
                            np.asarray(directions, dtype=float)[ch], np.asarray(attitude))


def try_solve(distances, attitude, radius: float, directions: np.ndarray) -> Optional[GeometricSolution]:
    """Like :func:`solve_geometric` on a frame, returning None when underdetermined."""
    try:
        return solve_geometric(problem_from_frame(distances, attitude, radius, directions))
    except Underdetermined:
        return None
