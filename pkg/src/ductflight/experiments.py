"""Experiment drivers behind the command line: data, training, evaluation, flights."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .config import (build_duct, build_field, build_gains, build_imu, build_params, build_tof,
                     build_train_config)
from .errors import ConfigError, EmptyInput, Underdetermined
from .estimation.dataset import COL, features, interleave_mirror, labels
from .estimation.geometric import problem_from_frame, solve_geometric
from .estimation.mlp import MlpModel, TrainReport, load_model, split_indices, train_mlp
from .forcemap import ForceField, RawForceRecord, build_grid, default_grid
from .geometry import CircularDuct, DuctShape, rotation_from_euler
from .sim import FlightResult, Schedule, SimConfig, WaypointPolicy, flight_to_dataset_rows, simulate


def derive_seed(seed: int, *key: int) -> int:
    """Independent child seed for (seed, key...), stable across runs and platforms."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _pool_map(fn, jobs: Sequence, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# statistics

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def quantiles(x) -> dict:
    """Linear-interpolation quantiles of ``x`` (sorted first; order-independent)."""
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        raise EmptyInput("no samples")
    q = np.quantile(x, QUANTILES)
    return {"p05": float(q[0]), "p25": float(q[1]), "median": float(q[2]), "p75": float(q[3]),
            "p95": float(q[4]), "iqr": float(q[3] - q[1])}


def error_summary(err, name: str, axis: str) -> dict:
    err = np.asarray(err, dtype=float)
    q = quantiles(err)
    return {"estimator": name, "axis": axis, "n": int(err.size), "median": q["median"], "p05": q["p05"],
            "p95": q["p95"], "median_abs": float(np.median(np.abs(err)))}


# ---------------------------------------------------------------------------
# assembling simulations from a config

def sim_config(cfg: Mapping, duct: Optional[DuctShape] = None, field_on: bool = True,
               estimator: Optional[str] = None, model: Optional[MlpModel] = None) -> SimConfig:
    duct = duct or build_duct(cfg)
    kind = estimator or cfg["estimator.kind"]
    if kind == "mlp" and model is None:
        model = model_from_config(cfg)
    return SimConfig(duct=duct, force_field=build_field(cfg, duct) if field_on else None,
                     params=build_params(cfg), tof=build_tof(cfg), clip=cfg["sensor.clip"],
                     imu=build_imu(cfg), gains=build_gains(cfg), estimator=kind, model=model,
                     fix_rate=cfg["estimator.fix_rate"], ekf_accel_sigma=cfg["ekf.accel_sigma"],
                     ekf_meas_sigma=cfg["ekf.meas_sigma"], mocap_sigma=cfg["estimator.mocap_sigma"],
                     ou_tau=cfg["field.ou_tau"])


def model_from_config(cfg: Mapping) -> MlpModel:
    path = cfg["estimator.model"]
    if not path:
        raise ConfigError("estimator.kind = mlp needs estimator.model")
    if not Path(path).exists():
        raise ConfigError(f"model file {path} does not exist")
    return load_model(path)


def _check_model_duct(model: Optional[MlpModel], duct: DuctShape) -> None:
    if model is not None and model.duct_tag and model.duct_tag != duct.tag:
        warnings.warn(f"model trained in {model.duct_tag} used in {duct.tag}", stacklevel=3)


# ---------------------------------------------------------------------------
# dataset generation

@dataclass
class DatasetInfo:
    flights: int
    crashed: list
    raw_rows: int
    rows: int


def _dataset_flight(job):
    cfg, k, seed = job
    duct = build_duct(cfg)
    scfg = sim_config(cfg, duct, estimator="truth")
    policy = WaypointPolicy(duct, scfg.params, margin=cfg["dataset.margin"],
                            ceiling_margin=cfg["dataset.ceiling_margin"],
                            dwell=(cfg["dataset.dwell_min"], cfg["dataset.dwell_max"]),
                            smoothing=cfg["dataset.smoothing"])
    rng = np.random.default_rng(derive_seed(seed, 1, k))
    duration = cfg["dataset.duration"]
    sched = policy.schedule(duration, rng)
    res = simulate(scfg, sched, duration, derive_seed(seed, 2, k))
    if res.collided:
        return k, None
    return k, flight_to_dataset_rows(res, cfg["flight.drop_start"], cfg["flight.drop_end"],
                                     t_offset=k * duration)


def gen_dataset(cfg: Mapping, progress: Optional[Callable] = None) -> tuple[np.ndarray, DatasetInfo]:
    """Scripted excitation flights logged at the sensing rate, mirrored, crash-free."""
    n = cfg["dataset.flights"]
    keep = cfg["dataset.duration"] - cfg["flight.drop_start"] - cfg["flight.drop_end"]
    if n < 1 or keep <= 0:
        raise EmptyInput("dataset.duration leaves no samples after trimming")
    jobs = [(dict(cfg), k, cfg["seed"]) for k in range(n)]
    results = sorted(_pool_map(_dataset_flight, jobs, cfg["workers"]), key=lambda r: r[0])
    crashed = [k for k, rows in results if rows is None]
    good = [rows for _, rows in results if rows is not None]
    if progress is not None:
        progress(f"{len(good)}/{n} flights kept")
    if not good:
        raise EmptyInput("every data-gathering flight collided")
    raw = np.concatenate(good)
    rows = interleave_mirror(raw)
    return rows, DatasetInfo(n, crashed, len(raw), len(rows))


# ---------------------------------------------------------------------------
# training and evaluation

def train(rows: np.ndarray, cfg: Mapping, duct: Optional[DuctShape] = None,
          progress: Optional[Callable] = None) -> tuple[MlpModel, TrainReport]:
    duct = duct or build_duct(cfg)
    tc = build_train_config(cfg)
    return train_mlp(features(rows), labels(rows), tc, duct_tag=duct.tag, duct_radius=duct.half_height,
                     progress=progress)


def test_rows(rows: np.ndarray, cfg: Mapping) -> np.ndarray:
    """The held-out split the trainer used for the given config."""
    tc = build_train_config(cfg)
    _, te = split_indices(len(rows), tc.test_fraction, tc.seed, tc.block)
    return rows[te]


def train_rows(rows: np.ndarray, cfg: Mapping) -> np.ndarray:
    tc = build_train_config(cfg)
    tr, _ = split_indices(len(rows), tc.test_fraction, tc.seed, tc.block)
    return rows[tr]


EVAL_COLUMNS = ("t", "y", "z", "nn_y", "nn_z", "geo_y", "geo_z", "geo_valid")


def geometric_estimates(rows: np.ndarray, duct: CircularDuct, directions: np.ndarray) -> np.ndarray:
    """(n, 3) of geometric (y, z, valid) per dataset row; yaw is taken as zero."""
    dist_cols = [COL[f"tof{i}"] for i in range(8)] + [COL["tof_up"], COL["tof_down"]]
    out = np.full((len(rows), 3), np.nan)
    out[:, 2] = 0.0
    for k, r in enumerate(rows):
        R = rotation_from_euler(r[COL["roll"]], r[COL["pitch"]], 0.0)
        try:
            sol = solve_geometric(problem_from_frame(r[dist_cols], R, duct.radius, directions))
        except Underdetermined:
            continue
        out[k] = (sol.y, sol.z, float(sol.inside))
    return out


def evaluate(rows: np.ndarray, model: Optional[MlpModel], duct: DuctShape,
             directions: Optional[np.ndarray] = None) -> tuple[np.ndarray, list]:
    """Per-frame estimates and the error quantiles of each estimator."""
    if len(rows) == 0:
        raise EmptyInput("nothing to evaluate")
    _check_model_duct(model, duct)
    n = len(rows)
    frame = np.full((n, len(EVAL_COLUMNS)), np.nan)
    frame[:, 0] = rows[:, COL["t"]]
    frame[:, 1:3] = labels(rows)
    if model is not None:
        frame[:, 3:5] = model.forward(features(rows))
        if model.duct_radius is not None:
            frame[:, 4] += model.duct_radius - duct.half_height
    frame[:, 7] = 0.0
    if isinstance(duct, CircularDuct):
        if directions is None:
            from .sensors import TofArrayConfig
            directions = np.array([c.direction for c in TofArrayConfig.default().channels])
        frame[:, 5:8] = geometric_estimates(rows, duct, directions)
    summary = []
    if model is not None:
        summary.append(error_summary(frame[:, 3] - frame[:, 1], "mlp", "y"))
        summary.append(error_summary(frame[:, 4] - frame[:, 2], "mlp", "z"))
    ok = frame[:, 7] > 0
    if ok.any():
        summary.append(error_summary(frame[ok, 5] - frame[ok, 1], "geometric", "y"))
        summary.append(error_summary(frame[ok, 6] - frame[ok, 2], "geometric", "z"))
    return frame, summary


# ---------------------------------------------------------------------------
# flights

def _setpoint(cfg: Mapping, duct: DuctShape, altitude: float) -> tuple:
    """Setpoint from a bottom-frame altitude; ``flight.x`` is a fraction of the duct length."""
    return cfg["flight.x"] * duct.length, cfg["flight.y"], altitude - duct.half_height


def flight_summary(res: FlightResult, duct: DuctShape, drop_start: float, drop_end: float) -> dict:
    """Lateral/vertical statistics (bottom frame) over the steady-state window."""
    w = res.window(drop_start, drop_end)
    out = {"seed": res.seed, "duration": res.duration, "collided": int(res.collided),
           "collision_time": res.collision_time if res.collided else math.nan, "samples": len(w)}
    if len(w):
        from .sim import LOG
        lat = quantiles(w[:, LOG["y"]])
        vert = quantiles(w[:, LOG["z"]] + duct.half_height)
        dev = np.abs(w[:, LOG["y"]] - w[:, LOG["sp_y"]])
        for k, v in lat.items():
            out[f"lat_{k}"] = v
        for k, v in vert.items():
            out[f"vert_{k}"] = v
        out["lat_dev_p95"] = float(np.quantile(dev, 0.95))
        out["saturated_fraction"] = float(w[:, LOG["saturated"]].mean())
    return out


def _check_window(cfg: Mapping, duration: float) -> None:
    if duration <= cfg["flight.drop_start"] + cfg["flight.drop_end"]:
        raise ConfigError(f"a {duration} s flight leaves no steady-state window after dropping "
                          f"{cfg['flight.drop_start']} s + {cfg['flight.drop_end']} s")


def _run_hover(job):
    cfg, altitude, field_on, estimator, model, seed, duration = job
    duct = build_duct(cfg)
    scfg = sim_config(cfg, duct, field_on=field_on, estimator=estimator, model=model)
    res = simulate(scfg, Schedule.constant(_setpoint(cfg, duct, altitude)), duration, seed)
    return res


def hover(cfg: Mapping, model: Optional[MlpModel] = None, altitude: Optional[float] = None,
          field_on: bool = True, estimator: Optional[str] = None, seed: Optional[int] = None,
          duration: Optional[float] = None, duct: Optional[DuctShape] = None) -> tuple[FlightResult, dict]:
    """One hover flight at a bottom-frame altitude."""
    if duct is not None:
        cfg = _with_duct(cfg, duct)
    duct = build_duct(cfg)
    estimator = estimator or cfg["estimator.kind"]
    if estimator == "mlp" and model is None:
        model = model_from_config(cfg)
    _check_model_duct(model if estimator == "mlp" else None, duct)
    altitude = cfg["flight.altitude"] if altitude is None else altitude
    seed = cfg["seed"] if seed is None else seed
    duration = cfg["flight.duration"] if duration is None else duration
    _check_window(cfg, duration)
    res = _run_hover((dict(cfg), altitude, field_on, estimator, model, seed, duration))
    summ = flight_summary(res, duct, cfg["flight.drop_start"], cfg["flight.drop_end"])
    summ = {"altitude": altitude, "field": int(field_on), "estimator": estimator, **summ}
    return res, summ


def _with_duct(cfg: Mapping, duct: DuctShape) -> dict:
    d = dict(cfg)
    if isinstance(duct, CircularDuct):
        d.update({"duct.shape": "circular", "duct.radius": duct.radius, "duct.length": duct.length})
    else:
        d.update({"duct.shape": "rectangular", "duct.width": duct.width, "duct.height": duct.height,
                  "duct.length": duct.length})
    return d


SWEEP_COLUMNS = ("altitude", "runs", "collisions", "samples",
                 "lat_median", "lat_iqr", "lat_p05", "lat_p25", "lat_p75", "lat_p95",
                 "vert_median", "vert_iqr", "vert_p05", "vert_p25", "vert_p75", "vert_p95")


def sweep(cfg: Mapping, model: Optional[MlpModel] = None, altitudes: Optional[Sequence[float]] = None,
          runs: Optional[int] = None, duration: Optional[float] = None, field_on: bool = True,
          estimator: Optional[str] = None) -> tuple[list, list]:
    """Repeated hovers per altitude; returns (per-altitude summary, per-run summaries).

    Steady-state samples of all runs at one altitude are pooled before the
    quantiles are taken.
    """
    duct = build_duct(cfg)
    estimator = estimator or cfg["estimator.kind"]
    if estimator == "mlp" and model is None:
        model = model_from_config(cfg)
    altitudes = list(cfg["sweep.altitudes"] if altitudes is None else altitudes)
    runs = cfg["sweep.runs"] if runs is None else runs
    duration = cfg["sweep.duration"] if duration is None else duration
    _check_window(cfg, duration)
    jobs = [(dict(cfg), alt, field_on, estimator, model, derive_seed(cfg["seed"], 3, a, r), duration)
            for a, alt in enumerate(altitudes) for r in range(runs)]
    results = _pool_map(_run_hover, jobs, cfg["workers"])
    from .sim import LOG
    per_alt, per_run = [], []
    for a, alt in enumerate(altitudes):
        mine = results[a * runs:(a + 1) * runs]
        windows = [r.window(cfg["flight.drop_start"], cfg["flight.drop_end"]) for r in mine]
        for r in mine:
            per_run.append({"altitude": alt, **flight_summary(r, duct, cfg["flight.drop_start"],
                                                               cfg["flight.drop_end"])})
        pooled = np.concatenate(windows) if windows else np.zeros((0, len(LOG)))
        row = {"altitude": alt, "runs": runs, "collisions": sum(r.collided for r in mine), "samples": len(pooled)}
        if len(pooled):
            for k, v in quantiles(pooled[:, LOG["y"]]).items():
                row[f"lat_{k}"] = v
            for k, v in quantiles(pooled[:, LOG["z"]] + duct.half_height).items():
                row[f"vert_{k}"] = v
        else:
            row.update({c: math.nan for c in SWEEP_COLUMNS if c not in row})
        per_alt.append(row)
    return per_alt, per_run


def inside_outside(cfg: Mapping, model: Optional[MlpModel] = None, altitude: Optional[float] = None,
                   duration: Optional[float] = None, estimator: Optional[str] = None):
    """Same controller and seed with the duct field on (inside) and off (outside)."""
    duct = build_duct(cfg)
    if altitude is None:
        altitude = cfg["inout.altitude"] if cfg["inout.altitude"] >= 0 else duct.half_height
    duration = cfg["inout.duration"] if duration is None else duration
    estimator = estimator or cfg["inout.estimator"]
    inside, s_in = hover(cfg, model, altitude, True, estimator, cfg["seed"], duration)
    outside, s_out = hover(cfg, model, altitude, False, estimator, cfg["seed"], duration)
    s_in["condition"], s_out["condition"] = "inside", "outside"
    return inside, outside, [s_in, s_out]


# ---------------------------------------------------------------------------
# force maps

def synthetic_raw_records(fld: ForceField, seconds_in: float = 10.0, seconds_out: float = 5.0,
                          fs: float = 7000.0, offset=(0.02, -0.01, 0.3), seed: int = 0) -> dict:
    """Load-cell style streams for every grid node of ``fld``.

    Each stream holds ``seconds_out`` free-air samples followed by
    ``seconds_in`` samples with the node's mean force and covariance added
    (white, Gaussian).  A constant sensor offset is present throughout.
    """
    rng = np.random.default_rng(seed)
    n_out, n_in = int(round(seconds_out * fs)), int(round(seconds_in * fs))
    t = np.arange(n_out + n_in) / fs
    out = {}
    for i, y in enumerate(fld.ys):
        for j, z in enumerate(fld.zs):
            m = fld.mean[i, j]
            c = fld.cov[i, j]
            cov = np.array([[c[0], c[1]], [c[1], c[2]]])
            L = np.linalg.cholesky(cov + 1e-30 * np.eye(2))
            f = np.tile(np.asarray(offset, dtype=float), (len(t), 1))
            f[n_out:, 1:3] += m + rng.standard_normal((n_in, 2)) @ L.T
            torques = np.zeros((len(t), 3))
            out[(float(y), float(z))] = RawForceRecord(t, f, torques, fs)
    return out


def forcemap(cfg: Mapping, records: Mapping, duct: Optional[DuctShape] = None) -> ForceField:
    duct = duct or build_duct(cfg)
    return build_grid(records, duct=duct, regime=cfg["field.regime"], baseline=cfg["forcemap.baseline"],
                      cutoff=cfg["forcemap.cutoff"], order=cfg["forcemap.order"],
                      stats_on=cfg["forcemap.stats_on"])


def demo_field(cfg: Mapping, ny: int = 16, nz: int = 12) -> ForceField:
    from .forcemap import synthesize_field
    from .config import build_amplitudes
    duct = build_duct(cfg)
    # snap to a millimetre lattice so positions survive the raw record file names
    axes = []
    for a in default_grid(duct, ny, nz):
        step = round((a[-1] - a[0]) / (len(a) - 1), 3)
        axes.append(round(a[0], 3) + step * np.arange(len(a)))
    return synthesize_field(duct, amplitudes=build_amplitudes(cfg), regime=cfg["field.regime"],
                            grid=tuple(axes))
