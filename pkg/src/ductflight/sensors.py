"""Time-of-flight array and IMU models."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import OutOfDuct
from .geometry import DuctShape, euler_from_rotation, ray_cast_many

GRAVITY = 9.81
N_CHANNELS = 10
UP, DOWN = 8, 9
# Estimator input order: horizontal 0..7, downward, then vy, vz, roll, pitch.
ESTIMATOR_CHANNELS = (0, 1, 2, 3, 4, 5, 6, 7, DOWN)


def mirror_channel(i: int) -> int:
    """Channel index seeing the y-mirrored direction of channel ``i``."""
    return (8 - i) % 8 if i < 8 else i


MIRROR_PERMUTATION = np.array([mirror_channel(i) for i in range(N_CHANNELS)])


@dataclass(frozen=True)
class TofSensorConfig:
    direction: tuple = (1.0, 0.0, 0.0)
    half_angle: float = math.radians(13.5)
    max_range: float = 4.0
    rays: int = 37
    statistic: str = "mean"
    noise_sigma: float = 0.005
    quantization: float = 0.001

    def __post_init__(self):
        if not 0.0 < self.half_angle < 0.5 * math.pi:
            raise ValueError("half_angle must lie in (0, pi/2)")
        if not self.max_range > 0 or self.rays < 1:
            raise ValueError("max_range must be positive and rays >= 1")
        if self.statistic not in ("mean", "min"):
            raise ValueError(f"unknown statistic {self.statistic!r}")
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))

    def cone_directions(self) -> np.ndarray:
        """Body-frame unit vectors of the rays sampled in the emission cone."""
        return _cone_directions(self.direction, self.half_angle, self.rays)


def ring_counts(rays: int) -> list[int]:
    """Ray count per concentric ring (excluding the centre ray).

    Ring k gets a share proportional to k, i.e. roughly uniform density over
    the cone's angular disc.  37 rays -> rings of 6, 12, 18.
    """
    if rays <= 1:
        return []
    n_rings = 1
    while 1 + 3 * n_rings * (n_rings + 1) < rays:
        n_rings += 1
    ideal = np.arange(1, n_rings + 1, dtype=float)
    ideal *= (rays - 1) / ideal.sum()
    counts = np.floor(ideal).astype(int)
    for k in np.argsort(-(ideal - counts), kind="stable")[: rays - 1 - counts.sum()]:
        counts[k] += 1
    return [int(c) for c in counts]


_cone_cache: dict = {}


def _cone_directions(direction, half_angle, rays) -> np.ndarray:
    key = (direction, half_angle, rays)
    out = _cone_cache.get(key)
    if out is not None:
        return out
    d = np.asarray(direction, dtype=float)
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    dirs = [d]
    counts = ring_counts(rays)
    for k, n in enumerate(counts, start=1):
        alpha = half_angle * k / len(counts)
        # pi/2 offset keeps every ring symmetric under y-mirroring for any n
        phase = 0.5 * math.pi + math.pi / n * (k % 2)
        for j in range(n):
            psi = phase + 2.0 * math.pi * j / n
            dirs.append(math.cos(alpha) * d + math.sin(alpha) * (math.cos(psi) * u + math.sin(psi) * v))
    out = np.array(dirs)
    out.setflags(write=False)
    _cone_cache[key] = out
    return out


@dataclass(frozen=True)
class TofArrayConfig:
    channels: tuple

    def __post_init__(self):
        if len(self.channels) != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels")

    @classmethod
    def default(cls, **overrides) -> "TofArrayConfig":
        """Eight horizontal sensors 45 degrees apart from +x, plus up and down."""
        dirs = [(math.cos(i * math.pi / 4), math.sin(i * math.pi / 4), 0.0) for i in range(8)]
        dirs += [(0.0, 0.0, 1.0), (0.0, 0.0, -1.0)]
        return cls(tuple(TofSensorConfig(direction=d, **overrides) for d in dirs))

    @classmethod
    def noise_free(cls, rays: int = 1, **overrides) -> "TofArrayConfig":
        return cls.default(rays=rays, noise_sigma=0.0, quantization=0.0, **overrides)

    def with_sensor(self, **overrides) -> "TofArrayConfig":
        return TofArrayConfig(tuple(replace(c, **overrides) for c in self.channels))


@dataclass
class TofFrame:
    t: float
    distances: np.ndarray
    vy: float = 0.0
    vz: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0

    def estimator_inputs(self) -> np.ndarray:
        """13-vector fed to the learned localizer (the up channel is dropped)."""
        return np.concatenate([self.distances[list(ESTIMATOR_CHANNELS)],
                               [self.vy, self.vz, self.roll, self.pitch]])


@dataclass(frozen=True)
class ImuParams:
    accel_sigma: float = 0.05
    gyro_sigma: float = 0.005


@dataclass
class ImuSample:
    t: float
    accel: np.ndarray
    gyro: np.ndarray


def _aggregate(t: np.ndarray, statistic: str) -> float:
    hits = t[~np.isnan(t)]
    if hits.size == 0:
        return 0.0
    return float(hits.mean() if statistic == "mean" else hits.min())


def _finish(value: float, sensor: TofSensorConfig, noise: float) -> float:
    if value == 0.0:
        return 0.0
    value += sensor.noise_sigma * noise
    if sensor.quantization > 0:
        value = round(value / sensor.quantization) * sensor.quantization
    if value > sensor.max_range or value < 0.0:
        return 0.0
    return value


def cone_distance(duct: DuctShape, position, attitude, sensor: TofSensorConfig,
                  rng: Optional[np.random.Generator] = None) -> float:
    """Range reported by one cone sensor mounted at the drone centre.

    Rays that leave the open duct ends are ignored; if none hit the wall the
    sensor reports 0, as it does for anything beyond ``max_range``.
    """
    position = np.asarray(position, dtype=float)
    dirs = sensor.cone_directions() @ np.asarray(attitude).T
    t = ray_cast_many(duct, position, dirs)
    noise = rng.standard_normal() if (rng is not None and sensor.noise_sigma > 0) else 0.0
    return _finish(_aggregate(t, sensor.statistic), sensor, noise)


class TofArray:
    """Vectorised evaluation of all channels; the hot path of the simulator."""

    def __init__(self, cfg: TofArrayConfig, clip: float = 0.5):
        self.cfg = cfg
        self.clip = clip
        self._dirs = [c.cone_directions() for c in cfg.channels]
        self._stack = np.concatenate(self._dirs)
        sizes = [len(d) for d in self._dirs]
        self._uniform = len(set(sizes)) == 1
        self._rays = sizes[0]
        self._starts = np.cumsum([0] + sizes[:-1])
        self._sigma = np.array([c.noise_sigma for c in cfg.channels])
        self._quant = np.array([c.quantization for c in cfg.channels])
        self._max = np.array([c.max_range for c in cfg.channels])
        stats = {c.statistic for c in cfg.channels}
        self._stat = stats.pop() if len(stats) == 1 else None

    def measure(self, duct: DuctShape, position, attitude, rng=None) -> np.ndarray:
        t = ray_cast_many(duct, np.asarray(position, dtype=float), self._stack @ np.asarray(attitude).T)
        if self._uniform and self._stat is not None:
            t = t.reshape(N_CHANNELS, self._rays)
            hit = ~np.isnan(t)
            n = hit.sum(axis=1)
            if self._stat == "mean":
                agg = np.where(hit, t, 0.0).sum(axis=1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    agg = np.where(n > 0, agg / np.maximum(n, 1), 0.0)
            else:
                agg = np.where(n > 0, np.where(hit, t, np.inf).min(axis=1), 0.0)
        else:
            agg = np.array([_aggregate(t[s:s + len(d)], c.statistic)
                            for s, d, c in zip(self._starts, self._dirs, self.cfg.channels)])
        out = agg
        if rng is not None and self._sigma.any():
            out = agg + self._sigma * rng.standard_normal(N_CHANNELS)
        q = self._quant
        if q.any():
            out = np.where(q > 0, np.round(out / np.where(q > 0, q, 1.0)) * q, out)
        bad = (agg == 0.0) | (out > self._max) | (out < 0.0)
        if self.clip is not None:
            bad |= out > self.clip
        return np.where(bad, 0.0, out)


def sense_array(duct: DuctShape, state, cfg: TofArrayConfig, clip: Optional[float] = 0.5,
                rng: Optional[np.random.Generator] = None, array: Optional[TofArray] = None) -> TofFrame:
    """Full ToF frame for a drone state; ranges above ``clip`` are stored as 0."""
    p = state.position
    if not duct.contains(p[1], p[2]) or not 0.0 <= p[0] <= duct.length:
        raise OutOfDuct(f"drone at {tuple(np.round(p, 4))}")
    if array is None:
        array = TofArray(cfg, clip)
    d = array.measure(duct, p, state.attitude, rng)
    roll, pitch, _ = euler_from_rotation(state.attitude)
    return TofFrame(state.t, d, float(state.velocity[1]), float(state.velocity[2]), roll, pitch)


def sense_imu(state, params: ImuParams = ImuParams(),
              rng: Optional[np.random.Generator] = None) -> ImuSample:
    """Specific force and body rate; ``state.accel`` is the world acceleration."""
    a = np.asarray(state.accel, dtype=float)
    f = state.attitude.T @ (a + np.array([0.0, 0.0, GRAVITY]))
    w = np.array(state.omega, dtype=float)
    if rng is not None:
        if params.accel_sigma > 0:
            f = f + params.accel_sigma * rng.standard_normal(3)
        if params.gyro_sigma > 0:
            w = w + params.gyro_sigma * rng.standard_normal(3)
    return ImuSample(state.t, f, w)
