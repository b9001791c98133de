"""Step-response check behind the shipped cascade gains.

Flies a 5 cm lateral and a 5 cm vertical step with truth feedback, a silent
IMU and no duct field, then prints overshoot and 5 mm settling time.  Pass
``--set control.vel_y.kp=7`` style overrides to try other gains.
"""
from __future__ import annotations

import argparse

import numpy as np

from ductflight.config import build_duct, load_config
from ductflight.experiments import sim_config
from ductflight.sim import Schedule, simulate

STEP = 0.05
T_STEP = 1.0


def step_response(cfg, axis: str, duration: float = 5.0):
    duct = build_duct(cfg)
    scfg = sim_config(cfg.with_updates(imu__accel_sigma=0.0, imu__gyro_sigma=0.0), duct,
                      field_on=False, estimator="truth")
    x0, z0 = 0.5 * duct.length, -0.06
    if axis == "y":
        sched = Schedule(lambda t: (x0, 0.0 if t < T_STEP else STEP, z0))
    else:
        sched = Schedule(lambda t: (x0, 0.0, z0 if t < T_STEP else z0 + STEP))
    res = simulate(scfg, sched, duration, seed=0)
    t = res.column("t")
    pos = res.column(axis) - (0.0 if axis == "y" else z0)
    after = t >= T_STEP
    overshoot = (pos[after].max() - STEP) / STEP
    late = t[after & (np.abs(pos - STEP) >= 0.005)]
    settle = late.max() - T_STEP if late.size else 0.0
    return overshoot, settle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    cfg = load_config(None, dict(s.split("=", 1) for s in args.set))
    for axis in ("y", "z"):
        over, settle = step_response(cfg, axis)
        print(f"{axis} step: overshoot {100 * over:.1f} %, settle {settle:.2f} s")


if __name__ == "__main__":
    main()
