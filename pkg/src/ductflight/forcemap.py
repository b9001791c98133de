"""Force-map processing and the duct disturbance field.

Raw force/torque streams are low-pass filtered, referenced to the free-air
baseline and reduced to a mean force and a 2x2 covariance per grid position.
The resulting :class:`ForceField` (or an analytic synthetic one) is what the
simulator samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import signal

from .errors import CutoffAboveNyquist, MissingPositions, OutOfDuct
from .geometry import CircularDuct, DuctShape, RectangularDuct


@dataclass
class RawForceRecord:
    t: np.ndarray
    forces: np.ndarray  # (n, 3) N
    torques: np.ndarray  # (n, 3) N*mm
    sample_rate: float = 7000.0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.forces = np.asarray(self.forces, dtype=float).reshape(-1, 3)
        self.torques = np.asarray(self.torques, dtype=float).reshape(-1, 3)
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("record time stamps must be strictly increasing")


@dataclass(frozen=True)
class ForceCell:
    y: float
    z: float
    mean: np.ndarray
    cov: np.ndarray


def butterworth_sos(order: int = 4, cutoff: float = 1.0, fs: float = 7000.0) -> np.ndarray:
    if cutoff >= 0.5 * fs:
        raise CutoffAboveNyquist(f"cutoff {cutoff} Hz >= fs/2 = {0.5 * fs} Hz")
    return signal.butter(order, cutoff, btype="low", fs=fs, output="sos")


def butterworth_lowpass(x, order: int = 4, cutoff: float = 1.0, fs: float = 7000.0) -> np.ndarray:
    """Causal order-``order`` Butterworth low-pass along axis 0.

    The sections start at steady state for the first sample, so a signal that
    is constant from the start passes without a start-up transient; any
    other transient decays with the filter's time constants (a few seconds at
    1 Hz).
    """
    sos = butterworth_sos(order, cutoff, fs)
    x = np.asarray(x, dtype=float)
    zi = signal.sosfilt_zi(sos)
    zi = zi.reshape(zi.shape + (1,) * (x.ndim - 1)) * x[0]
    y, _ = signal.sosfilt(sos, x, axis=0, zi=zi)
    return y


def baseline_subtract(t, x, window: float = 5.0) -> np.ndarray:
    """Subtract the channel mean over the first ``window`` seconds."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if t.size == 0 or t[-1] - t[0] < window:
        raise ValueError(f"series spans {t[-1] - t[0] if t.size else 0:.3f} s, shorter than the {window} s baseline")
    base = x[t < t[0] + window].mean(axis=0)
    return x - base


def cell_stats(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of an (n, 2) segment of (Fy, Fz)."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("need at least two samples")
    mean = s.mean(axis=0)
    d = s - mean
    cov = d.T @ d / (s.shape[0] - 1)
    return mean, 0.5 * (cov + cov.T)


@dataclass
class ForceField:
    """Regular (y, z) grid of mean force and covariance over a duct section.

    ``mean`` has shape (ny, nz, 2) for (Fy, Fz); ``cov`` has shape (ny, nz, 3)
    holding (yy, yz, zz).
    """

    duct: DuctShape
    ys: np.ndarray
    zs: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    regime: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=float)
        self.zs = np.asarray(self.zs, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        ny, nz = len(self.ys), len(self.zs)
        if self.mean.shape != (ny, nz, 2) or self.cov.shape != (ny, nz, 3):
            raise ValueError("mean/cov shape does not match the grid")
        self._y0, self._z0 = float(self.ys[0]), float(self.zs[0])
        self._dy = float(self.ys[1] - self.ys[0]) if ny > 1 else 1.0
        self._dz = float(self.zs[1] - self.zs[0]) if nz > 1 else 1.0
        self._ny, self._nz = ny, nz
        # nested lists are much faster than numpy indexing for scalar lookups
        self._table = np.concatenate([self.mean, self.cov], axis=2).tolist()

    @property
    def shape(self) -> tuple:
        return self._ny, self._nz

    def cells(self) -> list[ForceCell]:
        out = []
        for i, y in enumerate(self.ys):
            for j, z in enumerate(self.zs):
                c = self.cov[i, j]
                out.append(ForceCell(float(y), float(z), self.mean[i, j].copy(),
                                     np.array([[c[0], c[1]], [c[1], c[2]]])))
        return out

    def max_magnitude(self) -> float:
        return float(np.hypot(self.mean[..., 0], self.mean[..., 1]).max())

    def scaled(self, factor: float) -> "ForceField":
        """Field with mean scaled by ``factor`` and covariance by ``factor**2``."""
        return ForceField(self.duct, self.ys, self.zs, self.mean * factor, self.cov * factor**2,
                          self.regime, dict(self.meta))

    def _weights(self, y: float, z: float):
        fy = (y - self._y0) / self._dy
        fz = (z - self._z0) / self._dz
        fy = min(max(fy, 0.0), self._ny - 1.0)
        fz = min(max(fz, 0.0), self._nz - 1.0)
        i = min(int(fy), self._ny - 2) if self._ny > 1 else 0
        j = min(int(fz), self._nz - 2) if self._nz > 1 else 0
        return i, j, fy - i, fz - j

    def lookup_fast(self, y: float, z: float) -> tuple:
        """(Fy, Fz, cov_yy, cov_yz, cov_zz) by bilinear interpolation, no checks."""
        i, j, wy, wz = self._weights(y, z)
        tab = self._table
        if self._ny == 1 or self._nz == 1:
            return tuple(tab[i][j])
        a, b, c, d = tab[i][j], tab[i + 1][j], tab[i][j + 1], tab[i + 1][j + 1]
        w00 = (1 - wy) * (1 - wz)
        w10 = wy * (1 - wz)
        w01 = (1 - wy) * wz
        w11 = wy * wz
        return tuple(w00 * a[k] + w10 * b[k] + w01 * c[k] + w11 * d[k] for k in range(5))

    def lookup(self, y: float, z: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean force and covariance at (y, z).

        Bilinear inside the grid; outside its hull the query is projected onto
        the hull, which extends the border cells outward continuously.
        """
        if not self.duct.contains(y, z):
            raise OutOfDuct(f"({y:.4f}, {z:.4f}) is outside the duct section")
        fy, fz, cyy, cyz, czz = self.lookup_fast(y, z)
        return np.array([fy, fz]), np.array([[cyy, cyz], [cyz, czz]])


def default_grid(duct: DuctShape, ny: int = 16, nz: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """192-node layout (16 x 12) covering the region the rig can reach.

    For circular ducts the grid starts 0.4 r above the floor (8 cm in a 40 cm
    duct); nothing closer to the floor is measured, so lower queries fall back
    on the bottom row.
    """
    if isinstance(duct, CircularDuct):
        r = duct.radius
        return np.linspace(-0.6 * r, 0.6 * r, ny), np.linspace(-0.6 * r, 0.75 * r, nz)
    hw, hh = 0.5 * duct.width, 0.5 * duct.height
    return np.linspace(-0.8 * hw, 0.8 * hw, ny), np.linspace(-0.8 * hh, 0.8 * hh, nz)


# ---------------------------------------------------------------------------
# synthetic fields

@dataclass(frozen=True)
class FieldAmplitudes:
    """Amplitudes (N, at the 50 % hover regime) and length scales of the synthetic field.

    Length scales are fractions of the duct radius (circular) or absolute
    metres (rectangular).
    """

    ground_decay: float = 0.2
    column: float = 0.07  # down-draft on the duct axis
    column_width: float = 0.35
    column_height: float = 0.45
    column_center: float = 0.5  # the down-draft peaks this far above the axis
    green_height: float = 0.5
    wall: float = 0.12
    wall_decay: float = 0.15
    wall_lift: float = 0.4
    # rectangular ducts
    rect_ground: float = 0.08
    rect_wall: float = 0.06
    rect_ceiling: float = 0.06
    rect_decay: float = 0.05
    # fluctuation: 1-sigma = floor + gain * |mean|; vertical axis scaled by ratio
    sigma_floor: float = 0.004
    sigma_gain: float = 0.5
    sigma_vertical_ratio: float = 0.7


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def synthetic_force(duct: DuctShape, y, z, amps: FieldAmplitudes = FieldAmplitudes(),
                    regime: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Analytic mean (Fy, Fz) of the duct disturbance at (y, z)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    scale = (regime / 0.5) ** 2
    if isinstance(duct, CircularDuct):
        r = duct.radius
        h = z + np.sqrt(np.maximum(r * r - y * y, 0.0))
        lam_g = amps.ground_decay * r
        wy, wz = amps.column_width * r, amps.column_height * r
        zc = amps.column_center * r
        hg = amps.green_height * r

        def column_profile(zq):
            # unit value on the axis, growing towards the peak above it
            return np.exp(-((zq - zc) ** 2 - zc * zc) / (2 * wz * wz))

        # ground lift sized to cancel the downward column exactly at the green point
        g_amp = amps.column * float(column_profile(hg - r)) * math.exp(hg / lam_g)
        ground = g_amp * np.exp(-h / lam_g)
        column = -amps.column * np.exp(-y * y / (2 * wy * wy)) * column_profile(z)
        rho = np.hypot(y, z)
        with np.errstate(invalid="ignore", divide="ignore"):
            ry = np.where(rho > 0, y / np.maximum(rho, 1e-300), 0.0)
        wall = amps.wall * np.exp(-(r - rho) / (amps.wall_decay * r)) * _sigmoid(z / (0.1 * r))
        fy = wall * ry
        fz = ground + column + amps.wall_lift * wall * np.abs(ry)
    else:
        hw, hh = 0.5 * duct.width, 0.5 * duct.height
        lam = amps.rect_decay
        fz = amps.rect_ground * np.exp(-(z + hh) / lam) + amps.rect_ceiling * np.exp(-(hh - z) / lam)
        fy = amps.rect_wall * (np.exp(-(hw - y) / lam) - np.exp(-(hw + y) / lam))
    return scale * fy, scale * fz


def synthesize_field(duct: DuctShape, pattern: Optional[str] = None,
                     amplitudes: FieldAmplitudes = FieldAmplitudes(), regime: float = 0.5,
                     grid: Optional[tuple] = None) -> ForceField:
    """Gridded synthetic field reproducing the measured qualitative structure."""
    pattern = pattern or ("circular" if isinstance(duct, CircularDuct) else "rectangular")
    if (pattern == "circular") != isinstance(duct, CircularDuct):
        raise ValueError(f"pattern {pattern!r} does not match duct {duct}")
    ys, zs = grid if grid is not None else default_grid(duct)
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    fy, fz = synthetic_force(duct, Y, Z, amplitudes, regime)
    scale = (regime / 0.5) ** 2
    sigma = amplitudes.sigma_floor * scale + amplitudes.sigma_gain * np.hypot(fy, fz)
    cov = np.stack([sigma**2, np.zeros_like(sigma), (amplitudes.sigma_vertical_ratio * sigma) ** 2], axis=-1)
    return ForceField(duct, ys, zs, np.stack([fy, fz], axis=-1), cov, regime,
                      {"source": "synthetic", "pattern": pattern})


def null_field(duct: DuctShape) -> ForceField:
    ys, zs = default_grid(duct, 2, 2)
    return ForceField(duct, ys, zs, np.zeros((2, 2, 2)), np.zeros((2, 2, 3)), 0.5, {"source": "none"})


# ---------------------------------------------------------------------------
# measurement pipeline

@dataclass
class ProcessedRecord:
    t: np.ndarray
    filtered: np.ndarray  # baseline-subtracted, low-passed (Fx, Fy, Fz)
    raw: np.ndarray  # baseline-subtracted, unfiltered
    mean: np.ndarray
    cov: np.ndarray
    n: int


def process_record(rec: RawForceRecord, baseline: float = 5.0, cutoff: float = 1.0, order: int = 4,
                   settle: float = 0.0, stats_on: str = "raw") -> ProcessedRecord:
    """Filter, reference to the free-air baseline and reduce one position.

    The baseline is the mean of the filtered forces over the first
    ``baseline`` seconds (a causal filter keeps that window free of the
    in-duct step).  Statistics use samples after ``baseline + settle``; with
    ``stats_on="raw"`` they are computed on the baseline-subtracted unfiltered
    samples, with ``"filtered"`` on the low-passed series.
    """
    if stats_on not in ("raw", "filtered"):
        raise ValueError("stats_on must be 'raw' or 'filtered'")
    filt = butterworth_lowpass(rec.forces, order, cutoff, rec.sample_rate)
    t = rec.t
    if t[-1] - t[0] < baseline:
        raise ValueError("record shorter than the baseline window")
    base_mask = t < t[0] + baseline
    base = filt[base_mask].mean(axis=0)
    filt = filt - base
    raw = rec.forces - base
    seg = t >= t[0] + baseline + settle
    src = raw if stats_on == "raw" else filt
    mean, cov = cell_stats(src[seg][:, 1:3])
    return ProcessedRecord(t, filt, raw, mean, cov, int(seg.sum()))


def build_grid(records: Mapping, positions: Optional[Sequence] = None, duct: Optional[DuctShape] = None,
               regime: float = 0.5, **process_kw) -> ForceField:
    """Assemble a ForceField from one record stream per (y, z) position.

    ``positions`` lists the expected grid nodes (default: every node of the
    rectangular grid spanned by the record keys).  Missing nodes raise
    :class:`MissingPositions` listing the gaps.
    """
    keys = {(round(float(y), 9), round(float(z), 9)): rec for (y, z), rec in records.items()}
    if positions is None:
        ys = sorted({k[0] for k in keys})
        zs = sorted({k[1] for k in keys})
        positions = [(y, z) for y in ys for z in zs]
    positions = [(round(float(y), 9), round(float(z), 9)) for y, z in positions]
    missing = [p for p in positions if p not in keys]
    if missing:
        raise MissingPositions(missing)
    ys = np.array(sorted({p[0] for p in positions}))
    zs = np.array(sorted({p[1] for p in positions}))
    grid_missing = [(y, z) for y in ys for z in zs if (y, z) not in keys]
    if grid_missing:
        raise MissingPositions(grid_missing)
    for axis in (ys, zs):
        if len(axis) > 2 and not np.allclose(np.diff(axis), axis[1] - axis[0], rtol=1e-6, atol=1e-9):
            raise ValueError("positions are not regularly spaced")
    if duct is None:
        r = max(np.hypot(y, z) for y, z in positions) * 1.05
        duct = CircularDuct(r)
    mean = np.zeros((len(ys), len(zs), 2))
    cov = np.zeros((len(ys), len(zs), 3))
    for i, y in enumerate(ys):
        for j, z in enumerate(zs):
            pr = process_record(keys[(y, z)], **process_kw)
            mean[i, j] = pr.mean
            cov[i, j] = (pr.cov[0, 0], pr.cov[0, 1], pr.cov[1, 1])
    return ForceField(duct, ys, zs, mean, cov, regime, {"source": "measured"})
