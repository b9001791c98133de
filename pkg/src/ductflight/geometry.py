"""Duct shapes, duct frames, rotations and exact ray casting.

All internal math uses the axis-centered duct frame: origin on the duct axis
(circular) or at the centre of the cross-section (rectangular), x along the
axis, z up.  The segment occupies ``0 <= x <= length`` and is open at both
ends.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import OriginOutsideDuct

# Drone body-to-duct-wall footprint in the cross-section is sampled on this
# many points when checking clearance.
_FOOTPRINT_SAMPLES = 24


@dataclass(frozen=True)
class CircularDuct:
    radius: float
    length: float = 1.0

    def __post_init__(self):
        if not self.radius > 0 or not self.length > 0:
            raise ValueError("radius and length must be positive")

    @property
    def half_height(self) -> float:
        return self.radius

    @property
    def tag(self) -> str:
        return f"d{round(2000 * self.radius)}"

    def contains(self, y: float, z: float, margin: float = 0.0) -> bool:
        return y * y + z * z < (self.radius - margin) ** 2

    def floor_distance(self, y: float, z: float) -> float:
        """Vertical distance from (y, z) down to the wall."""
        return z + math.sqrt(max(self.radius**2 - y * y, 0.0))

    def scaled(self, k: float) -> "CircularDuct":
        return CircularDuct(self.radius * k, self.length * k)


@dataclass(frozen=True)
class RectangularDuct:
    width: float
    height: float
    length: float = 1.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.length > 0):
            raise ValueError("width, height and length must be positive")

    @property
    def half_height(self) -> float:
        return 0.5 * self.height

    @property
    def tag(self) -> str:
        return f"r{round(1000 * self.width)}x{round(1000 * self.height)}"

    def contains(self, y: float, z: float, margin: float = 0.0) -> bool:
        return abs(y) < 0.5 * self.width - margin and abs(z) < 0.5 * self.height - margin

    def floor_distance(self, y: float, z: float) -> float:
        return z + 0.5 * self.height

    def scaled(self, k: float) -> "RectangularDuct":
        return RectangularDuct(self.width * k, self.height * k, self.length * k)


DuctShape = Union[CircularDuct, RectangularDuct]


def duct_from_dict(d: dict) -> DuctShape:
    kind = d.get("shape", "circular")
    length = float(d.get("length", 1.0))
    if kind == "circular":
        return CircularDuct(float(d["radius"]), length)
    if kind == "rectangular":
        return RectangularDuct(float(d["width"]), float(d["height"]), length)
    raise ValueError(f"unknown duct shape {kind!r}")


def duct_to_dict(duct: DuctShape) -> dict:
    if isinstance(duct, CircularDuct):
        return {"shape": "circular", "radius": duct.radius, "length": duct.length}
    return {"shape": "rectangular", "width": duct.width, "height": duct.height, "length": duct.length}


class DuctFrame(enum.Enum):
    AXIS = "axis"
    BOTTOM = "bottom"


def frame_convert(p, src: DuctFrame, dst: DuctFrame, duct: DuctShape) -> np.ndarray:
    """Translate a point between the axis-centered and bottom-centered frames."""
    p = np.array(p, dtype=float)
    if src is dst:
        return p
    shift = duct.half_height
    p[..., 2] = p[..., 2] + shift if dst is DuctFrame.BOTTOM else p[..., 2] - shift
    return p


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(direction)
        if n == 0:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", direction / n)


def _check_origin(duct: DuctShape, o) -> None:
    if not duct.contains(o[1], o[2]) or not 0.0 <= o[0] <= duct.length:
        raise OriginOutsideDuct(f"origin {tuple(np.round(o, 6))} is not inside {duct}")


def ray_cast(duct: DuctShape, ray: Ray) -> Optional[float]:
    """Distance along ``ray`` to the duct wall, or None if it leaves an open end."""
    _check_origin(duct, ray.origin)
    t = ray_cast_many(duct, ray.origin[None, :], ray.direction[None, :])[0]
    return None if math.isnan(t) else float(t)


def ray_cast_many(duct: DuctShape, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Vectorised wall distances; NaN marks rays escaping through an open end.

    Origins are assumed inside the duct (not re-checked here).
    """
    o = np.broadcast_to(origins, directions.shape)
    d = directions
    if isinstance(duct, CircularDuct):
        a = d[:, 1] ** 2 + d[:, 2] ** 2
        b = 2.0 * (o[:, 1] * d[:, 1] + o[:, 2] * d[:, 2])
        c = o[:, 1] ** 2 + o[:, 2] ** 2 - duct.radius**2
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            sq = np.sqrt(b * b - 4.0 * a * c)
            # c < 0 inside, so the positive root is well defined; pick the
            # cancellation-free form depending on the sign of b.
            t = np.where(b > 0, (-2.0 * c) / (b + sq), (sq - b) / (2.0 * a))
        t = np.where(a > 1e-18, t, np.inf)
    else:
        hw, hh = 0.5 * duct.width, 0.5 * duct.height
        with np.errstate(divide="ignore", invalid="ignore"):
            ty = np.where(d[:, 1] > 0, (hw - o[:, 1]) / d[:, 1],
                          np.where(d[:, 1] < 0, (-hw - o[:, 1]) / d[:, 1], np.inf))
            tz = np.where(d[:, 2] > 0, (hh - o[:, 2]) / d[:, 2],
                          np.where(d[:, 2] < 0, (-hh - o[:, 2]) / d[:, 2], np.inf))
        t = np.minimum(ty, tz)
    x_hit = o[:, 0] + t * d[:, 0]
    with np.errstate(invalid="ignore"):
        inside = np.isfinite(t) & (x_hit >= 0.0) & (x_hit <= duct.length)
    return np.where(inside, t, np.nan)


# ---------------------------------------------------------------------------
# rotations (body -> world), ZYX convention: R = Rz(yaw) Ry(pitch) Rx(roll)

def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def euler_from_rotation(R: np.ndarray) -> tuple[float, float, float]:
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


def drone_clear_of_wall(duct: DuctShape, y: float, z: float, roll: float,
                        half_span: float, half_height: float) -> bool:
    """True when the drone's cross-section footprint is inside the duct.

    The footprint is the span x height rectangle rolled about the duct axis;
    pitch and yaw barely change the cross-section extent and are ignored.
    """
    pts = _footprint(half_span, half_height)
    c, s = math.cos(roll), math.sin(roll)
    py = y + c * pts[:, 0] - s * pts[:, 1]
    pz = z + s * pts[:, 0] + c * pts[:, 1]
    if isinstance(duct, CircularDuct):
        return bool(np.all(py * py + pz * pz < duct.radius**2))
    return bool(np.all((np.abs(py) < 0.5 * duct.width) & (np.abs(pz) < 0.5 * duct.height)))


_footprint_cache: dict = {}


def _footprint(hs: float, hh: float) -> np.ndarray:
    key = (hs, hh)
    pts = _footprint_cache.get(key)
    if pts is None:
        n = _FOOTPRINT_SAMPLES // 4
        u = np.linspace(-1.0, 1.0, n, endpoint=False)
        pts = np.concatenate([
            np.c_[u * hs, np.full(n, -hh)],
            np.c_[np.full(n, hs), u * hh],
            np.c_[-u * hs, np.full(n, hh)],
            np.c_[np.full(n, -hs), -u * hh],
        ])
        _footprint_cache[key] = pts
    return pts
