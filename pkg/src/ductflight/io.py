"""File formats: datasets, flight logs, force fields, raw force records, tables.

Floats are written with ``repr`` (shortest round-trip form), so every CSV
reads back bit for bit and identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyInput
from .estimation.dataset import DATASET_COLUMNS
from .forcemap import ForceField, RawForceRecord
from .geometry import duct_from_dict, duct_to_dict

FIELD_COLUMNS = ("y", "z", "fy_mean", "fz_mean", "cov_yy", "cov_yz", "cov_zz")
RAW_COLUMNS = ("t", "fx", "fy", "fz", "tx", "ty", "tz")
_RAW_NAME = re.compile(r"^y([+-]\d+)_z([+-]\d+)\.csv$")


def write_table(path, columns: Sequence[str], rows) -> None:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != len(columns):
        raise ValueError(f"rows must have {len(columns)} columns")
    lines = [",".join(columns)]
    lines.extend(",".join(map(repr, r)) for r in rows.tolist())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path, expected: Optional[Sequence[str]] = None) -> tuple[tuple, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = tuple(fh.readline().strip().split(","))
        if expected is not None and header != tuple(expected):
            raise ValueError(f"{path}: unexpected header {header}")
        body = fh.read()
    if not body.strip():
        return header, np.zeros((0, len(header)))
    data = np.array([[float(v) for v in line.split(",")] for line in body.splitlines() if line],
                    dtype=float)
    return header, data


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def sidecar(path) -> Path:
    p = Path(path)
    return p.with_suffix(".json")


# datasets ------------------------------------------------------------------

def write_dataset(path, rows) -> None:
    write_table(path, DATASET_COLUMNS, rows)


def read_dataset(path) -> np.ndarray:
    _, data = read_table(path, DATASET_COLUMNS)
    return data


# flight logs ---------------------------------------------------------------

def write_flight_log(path, columns: Sequence[str], rows, meta: Mapping) -> None:
    write_table(path, columns, rows)
    write_json(sidecar(path), dict(meta))


def read_flight_log(path) -> tuple[tuple, np.ndarray, dict]:
    header, data = read_table(path)
    meta = read_json(sidecar(path)) if sidecar(path).exists() else {}
    return header, data, meta


# force fields --------------------------------------------------------------

def write_force_field(path, fld: ForceField) -> None:
    rows = []
    for i, y in enumerate(fld.ys):
        for j, z in enumerate(fld.zs):
            m, c = fld.mean[i, j], fld.cov[i, j]
            rows.append((y, z, m[0], m[1], c[0], c[1], c[2]))
    write_table(path, FIELD_COLUMNS, rows)
    meta = {"duct": duct_to_dict(fld.duct), "regime": fld.regime, "ny": len(fld.ys), "nz": len(fld.zs),
            "frame": "axis", "units": {"position": "m", "force": "N", "covariance": "N^2"},
            "meta": fld.meta}
    write_json(sidecar(path), meta)


def read_force_field(path) -> ForceField:
    _, data = read_table(path, FIELD_COLUMNS)
    meta = read_json(sidecar(path))
    ny, nz = int(meta["ny"]), int(meta["nz"])
    if len(data) != ny * nz:
        raise ValueError(f"{path}: expected {ny * nz} cells, found {len(data)}")
    grid = data.reshape(ny, nz, len(FIELD_COLUMNS))
    return ForceField(duct_from_dict(meta["duct"]), grid[:, 0, 0], grid[0, :, 1], grid[:, :, 2:4],
                      grid[:, :, 4:7], float(meta["regime"]), dict(meta.get("meta", {})))


# raw force records -----------------------------------------------------------

def raw_record_name(y: float, z: float) -> str:
    """File name encoding the grid position in millimetres, e.g. ``y+010_z-045.csv``."""
    return f"y{round(y * 1000):+04d}_z{round(z * 1000):+04d}.csv"


def parse_raw_record_name(name: str) -> tuple[float, float]:
    m = _RAW_NAME.match(Path(name).name)
    if m is None:
        raise ValueError(f"{name!r} does not encode a grid position")
    return int(m.group(1)) / 1000.0, int(m.group(2)) / 1000.0


def write_raw_record(path, rec: RawForceRecord) -> None:
    write_table(path, RAW_COLUMNS, np.column_stack([rec.t, rec.forces, rec.torques]))


def read_raw_record(path, sample_rate: Optional[float] = None) -> RawForceRecord:
    """``sample_rate`` defaults to the one implied by the time column."""
    _, d = read_table(path, RAW_COLUMNS)
    if sample_rate is None:
        if len(d) < 2:
            raise EmptyInput(f"{path}: too few samples to infer the sample rate")
        sample_rate = 1.0 / float(np.median(np.diff(d[:, 0])))
    return RawForceRecord(d[:, 0], d[:, 1:4], d[:, 4:7], sample_rate)


def read_raw_dir(directory, sample_rate: Optional[float] = None) -> dict:
    recs = {}
    for p in sorted(Path(directory).glob("*.csv")):
        try:
            pos = parse_raw_record_name(p.name)
        except ValueError:
            continue
        recs[pos] = read_raw_record(p, sample_rate)
    if not recs:
        raise EmptyInput(f"no raw force records in {directory}")
    return recs


# summaries ---------------------------------------------------------------

def write_records(path, records: Iterable[Mapping], columns: Optional[Sequence[str]] = None) -> None:
    """CSV of heterogeneous rows (strings allowed), e.g. summaries."""
    records = list(records)
    if columns is None:
        columns = list(records[0].keys()) if records else []
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])


def read_records(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = int(v)
            except ValueError:
                try:
                    conv[k] = float(v)
                except ValueError:
                    conv[k] = v
        out.append(conv)
    return out
