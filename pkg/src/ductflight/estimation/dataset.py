"""Tabular training data for the learned localizer."""
from __future__ import annotations

import numpy as np

from ..sensors import MIRROR_PERMUTATION

TOF_COLUMNS = tuple(f"tof{i}" for i in range(8)) + ("tof_up", "tof_down")
DATASET_COLUMNS = ("t",) + TOF_COLUMNS + ("y", "z", "vy", "vz", "roll", "pitch", "x")
COL = {name: k for k, name in enumerate(DATASET_COLUMNS)}
_TOF = np.array([COL[c] for c in TOF_COLUMNS])
FEATURE_COLUMNS = TOF_COLUMNS[:8] + ("tof_down", "vy", "vz", "roll", "pitch")
_FEATURES = np.array([COL[c] for c in FEATURE_COLUMNS])
_LABELS = np.array([COL["y"], COL["z"]])


def augment_mirror(rows: np.ndarray) -> np.ndarray:
    """Reflect dataset rows across the duct's vertical (XZ) symmetry plane.

    y, vy and roll change sign and horizontal ranges are permuted so each
    channel takes the reading of its mirrored twin; everything else is kept.
    Applying it twice returns the input bit for bit.
    """
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    r = np.atleast_2d(rows).copy()
    r[:, _TOF] = r[:, _TOF[MIRROR_PERMUTATION]]
    for c in ("y", "vy", "roll"):
        r[:, COL[c]] = -r[:, COL[c]]
    return r[0] if single else r


def interleave_mirror(rows: np.ndarray) -> np.ndarray:
    """Each original row followed by its mirror."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    out = np.empty((2 * len(rows), rows.shape[1]))
    out[0::2] = rows
    out[1::2] = augment_mirror(rows)
    return out


def features(rows: np.ndarray) -> np.ndarray:
    return np.atleast_2d(rows)[:, _FEATURES]


def labels(rows: np.ndarray) -> np.ndarray:
    return np.atleast_2d(rows)[:, _LABELS]
