"""Experiment configuration: flat ``key = value`` files with dotted sections.

    # comment
    duct.radius = 0.175
    sweep.altitudes = 0.095, 0.115, 0.135

Every key has a typed default (see :data:`DEFAULTS`); unknown keys are
rejected so typos fail loudly.  ``format_config`` prints the full set.
"""
from __future__ import annotations

import math
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping, Optional

from .control import CascadeGains, Pid
from .dynamics import DroneParams
from .errors import ConfigError
from .estimation.mlp import TrainConfig
from .forcemap import FieldAmplitudes
from .geometry import CircularDuct, DuctShape, RectangularDuct
from .sensors import ImuParams, TofArrayConfig

_LOOPS = ("pos_x", "pos_y", "pos_z", "vel_x", "vel_y", "vel_z", "att_roll", "att_pitch", "att_yaw",
          "rate_roll", "rate_pitch", "rate_yaw")


def _defaults() -> dict:
    d: dict[str, Any] = {
        "seed": 0,
        "workers": 1,
        "duct.shape": "circular",
        "duct.radius": 0.175,
        "duct.width": 0.5,
        "duct.height": 0.5,
        "duct.length": 1.0,
        "field.source": "synthetic",
        "field.path": "",
        "field.regime": 0.5,
        "field.ou_tau": 0.5,
        "drone.mass": 0.130,
        "drone.span": 0.180,
        "drone.height": 0.075,
        "drone.max_thrust": 0.0,
        "drone.arm_length": 0.052,
        "drone.yaw_coeff": 0.006,
        "drone.drag": 0.01,
        "sensor.half_angle_deg": 13.5,
        "sensor.rays": 37,
        "sensor.statistic": "mean",
        "sensor.max_range": 4.0,
        "sensor.noise_sigma": 0.005,
        "sensor.quantization": 0.001,
        "sensor.clip": 0.5,
        "imu.accel_sigma": 0.05,
        "imu.gyro_sigma": 0.005,
        "estimator.kind": "mlp",
        "estimator.model": "",
        "estimator.fix_rate": 10.0,
        "estimator.mocap_sigma": 0.001,
        "ekf.accel_sigma": 0.05,
        "ekf.meas_sigma": 0.005,
        "flight.x": 0.5,
        "flight.y": 0.0,
        "flight.altitude": 0.115,
        "flight.duration": 120.0,
        "flight.drop_start": 10.0,
        "flight.drop_end": 5.0,
        "sweep.altitudes": [0.095, 0.115, 0.135, 0.155, 0.175],
        "sweep.runs": 5,
        "sweep.duration": 120.0,
        "inout.altitude": -1.0,
        "inout.duration": 120.0,
        "inout.estimator": "mocap",
        "dataset.flights": 9,
        "dataset.duration": 180.0,
        "dataset.margin": 0.01,
        "dataset.ceiling_margin": 0.06,
        "dataset.dwell_min": 2.0,
        "dataset.dwell_max": 4.0,
        "dataset.smoothing": 0.6,
        "dataset.path": "",
        "forcemap.raw_dir": "",
        "forcemap.baseline": 5.0,
        "forcemap.cutoff": 1.0,
        "forcemap.order": 4,
        "forcemap.stats_on": "raw",
    }
    for f in fields(FieldAmplitudes):
        d[f"field.{f.name}"] = f.default
    for f in fields(TrainConfig):
        d[f"train.{f.name}"] = f.default
    g = CascadeGains()
    for loop in _LOOPS:
        pid: Pid = getattr(g, loop)
        for k in ("kp", "ki", "kd", "limit", "i_limit"):
            d[f"control.{loop}.{k}"] = getattr(pid, k)
    d["control.outer_rate"] = g.outer_rate
    d["control.inner_rate"] = g.inner_rate
    d["control.max_tilt_deg"] = round(math.degrees(g.max_tilt), 9)
    return d


DEFAULTS = _defaults()


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from exc
    return text


def _format_value(v) -> str:
    if isinstance(v, list):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class Config(Mapping):
    """Immutable mapping of fully-typed settings."""

    def __init__(self, values: Optional[Mapping] = None):
        self._v = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            default = DEFAULTS[k]
            self._v[k] = _parse_value(k, v, default) if isinstance(v, str) and not isinstance(default, str) else v

    def __getitem__(self, key):
        return self._v[key]

    def __iter__(self):
        return iter(self._v)

    def __len__(self):
        return len(self._v)

    def with_updates(self, **kv) -> "Config":
        """Copy with ``section__key`` style overrides (``__`` stands for ``.``)."""
        merged = dict(self._v)
        merged.update({k.replace("__", "."): v for k, v in kv.items()})
        return Config(merged)

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self._v.items() if k.startswith(p)}


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: Optional[Mapping] = None) -> Config:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_config_text(p.read_text()))
    values.update(overrides or {})
    return Config(values)


def format_config(cfg: Optional[Mapping] = None) -> str:
    cfg = cfg or Config()
    lines = []
    section = None
    for k in sorted(cfg, key=lambda k: (k.count(".") > 0, k.split(".")[0], k)):
        head = k.split(".")[0] if "." in k else ""
        if head != section:
            if lines:
                lines.append("")
            if head:
                lines.append(f"# {head}")
            section = head
        lines.append(f"{k} = {_format_value(cfg[k])}")
    return "\n".join(lines) + "\n"


# builders ------------------------------------------------------------------

def build_duct(cfg: Mapping) -> DuctShape:
    shape = cfg["duct.shape"]
    if shape == "circular":
        return CircularDuct(cfg["duct.radius"], cfg["duct.length"])
    if shape == "rectangular":
        return RectangularDuct(cfg["duct.width"], cfg["duct.height"], cfg["duct.length"])
    raise ConfigError(f"duct.shape must be circular or rectangular, not {shape!r}")


def build_amplitudes(cfg: Mapping) -> FieldAmplitudes:
    return FieldAmplitudes(**{f.name: cfg[f"field.{f.name}"] for f in fields(FieldAmplitudes)})


def build_field(cfg: Mapping, duct: Optional[DuctShape] = None):
    from .forcemap import synthesize_field
    from .io import read_force_field

    duct = duct or build_duct(cfg)
    src = cfg["field.source"]
    if src == "none":
        return None
    if src == "synthetic":
        return synthesize_field(duct, amplitudes=build_amplitudes(cfg), regime=cfg["field.regime"])
    if src == "file":
        path = Path(cfg["field.path"])
        if not path.exists():
            raise ConfigError(f"field file {path} does not exist")
        fld = read_force_field(path)
        if fld.duct != duct:
            raise ConfigError(f"field file is for {fld.duct}, config duct is {duct}")
        return fld
    raise ConfigError(f"field.source must be synthetic, file or none, not {src!r}")


def build_params(cfg: Mapping) -> DroneParams:
    return DroneParams(mass=cfg["drone.mass"], span=cfg["drone.span"], height=cfg["drone.height"],
                       max_thrust=cfg["drone.max_thrust"] or None, arm_length=cfg["drone.arm_length"],
                       yaw_coeff=cfg["drone.yaw_coeff"], drag=cfg["drone.drag"])


def build_tof(cfg: Mapping) -> TofArrayConfig:
    return TofArrayConfig.default(half_angle=math.radians(cfg["sensor.half_angle_deg"]), rays=cfg["sensor.rays"],
                                  statistic=cfg["sensor.statistic"], max_range=cfg["sensor.max_range"],
                                  noise_sigma=cfg["sensor.noise_sigma"], quantization=cfg["sensor.quantization"])


def build_imu(cfg: Mapping) -> ImuParams:
    return ImuParams(cfg["imu.accel_sigma"], cfg["imu.gyro_sigma"])


def build_gains(cfg: Mapping) -> CascadeGains:
    kw = {loop: Pid(**{k: cfg[f"control.{loop}.{k}"] for k in ("kp", "ki", "kd", "limit", "i_limit")})
          for loop in _LOOPS}
    return CascadeGains(**kw, outer_rate=cfg["control.outer_rate"], inner_rate=cfg["control.inner_rate"],
                        max_tilt=math.radians(cfg["control.max_tilt_deg"]))


def build_train_config(cfg: Mapping) -> TrainConfig:
    return TrainConfig(**{f.name: cfg[f"train.{f.name}"] for f in fields(TrainConfig)})

