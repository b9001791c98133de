"""``ductflight`` command line."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import experiments as ex
from . import io
from .config import Config, build_duct, format_config, load_config
from .errors import DuctFlightError
from .estimation.mlp import load_model, save_model
from .geometry import duct_to_dict
from .sim import LOG_COLUMNS

log = logging.getLogger("ductflight")


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    d = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=d, help="key = value config file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the config)")
    p.add_argument("--out", default=d, help="output directory (default: out)")
    p.add_argument("--set", action="append", default=d, metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--print-config", action="store_true", default=False if top else argparse.SUPPRESS,
                   help="print the effective configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ductflight", description=__doc__)
    _common(parser, True)
    sub = parser.add_subparsers(dest="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, False)
        return p

    p = add("gen-dataset", "simulate excitation flights and write a ToF dataset")
    p.add_argument("--flights", type=int)
    p.add_argument("--duration", type=float)

    p = add("train", "train the MLP localizer on a dataset")
    p.add_argument("--dataset")

    p = add("eval", "compare the MLP and geometric localizers on a dataset")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")

    p = add("hover", "closed-loop hover flight")
    p.add_argument("--model")
    p.add_argument("--altitude", type=float, help="bottom-frame altitude (m)")
    p.add_argument("--estimator", choices=("truth", "mocap", "mlp", "geometric"))
    p.add_argument("--duration", type=float)
    p.add_argument("--no-field", action="store_true")

    p = add("sweep", "repeated hovers over several altitudes")
    p.add_argument("--model")
    p.add_argument("--altitudes", type=float, nargs="+")
    p.add_argument("--runs", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--estimator", choices=("truth", "mocap", "mlp", "geometric"))
    p.add_argument("--no-field", action="store_true")

    p = add("forcemap", "build a force map from raw load-cell records")
    p.add_argument("--raw-dir")
    p.add_argument("--synthesize", action="store_true",
                   help="first write synthetic raw records from the configured field")

    p = add("inout", "same hover with the duct field on and off")
    p.add_argument("--model")
    p.add_argument("--altitude", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--estimator", choices=("truth", "mocap", "mlp", "geometric"))

    p = add("plot", "render a CSV output as SVG")
    p.add_argument("input")
    p.add_argument("--kind", choices=("forcemap", "errors", "scatter", "sweep"))
    return parser


def _config(args) -> Config:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise DuctFlightError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return load_config(getattr(args, "config", None), overrides)


def _out(args) -> Path:
    out = Path(getattr(args, "out", None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model(args, cfg, out: Path, required: bool):
    path = getattr(args, "model", None) or cfg["estimator.model"] or (out / "model.json")
    if Path(path).exists():
        return load_model(path)
    if required:
        raise DuctFlightError(f"model file {path} does not exist (run `ductflight train` first)")
    return None


def _flight_meta(cfg, res, extra: dict) -> dict:
    return {"frame": "axis", "duct": duct_to_dict(build_duct(cfg)), "seed": res.seed,
            "collided": bool(res.collided), "collision_time": res.collision_time,
            "sample_rate_hz": 250.0, **extra}


def _fmt_summary(s: dict) -> str:
    keys = ("condition", "altitude", "estimator", "field", "collided", "lat_median", "lat_iqr", "lat_dev_p95",
            "vert_median", "vert_iqr")
    parts = []
    for k in keys:
        if k in s:
            v = s[k]
            parts.append(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def cmd_gen_dataset(args, cfg, out):
    upd = {}
    if args.flights is not None:
        upd["dataset__flights"] = args.flights
    if args.duration is not None:
        upd["dataset__duration"] = args.duration
    cfg = cfg.with_updates(**upd)
    rows, info = ex.gen_dataset(cfg, progress=log.info)
    path = out / "dataset.csv"
    io.write_dataset(path, rows)
    io.write_json(io.sidecar(path), {"duct": duct_to_dict(build_duct(cfg)), "frame": "axis", "seed": cfg["seed"],
                                     "flights": info.flights, "crashed": info.crashed, "raw_rows": info.raw_rows,
                                     "rows": info.rows, "sample_rate_hz": 250.0, "mirrored": True})
    print(f"wrote {path} ({info.rows} rows, {len(info.crashed)} crashed flights dropped)")


def _dataset(args, cfg, out):
    path = getattr(args, "dataset", None) or cfg["dataset.path"] or (out / "dataset.csv")
    if not Path(path).exists():
        raise DuctFlightError(f"dataset {path} does not exist (run `ductflight gen-dataset` first)")
    return io.read_dataset(path)


def cmd_train(args, cfg, out):
    rows = _dataset(args, cfg, out)
    model, report = ex.train(rows, cfg, progress=lambda e, a, b: log.info("epoch %d train %.3g test %.3g", e, a, b))
    save_model(model, out / "model.json")
    io.write_table(out / "train_report.csv", ("epoch", "train_loss", "test_loss"),
                   [(k, a, b) for k, (a, b) in enumerate(zip(report.train_loss, report.test_loss))])
    print(f"wrote {out / 'model.json'}; final train {report.train_loss[-1]:.3g}, test {report.test_loss[-1]:.3g}")


def cmd_eval(args, cfg, out):
    rows = _dataset(args, cfg, out)
    model = _model(args, cfg, out, required=False)
    if args.split == "test":
        rows = ex.test_rows(rows, cfg)
    elif args.split == "train":
        rows = ex.train_rows(rows, cfg)
    frame, summary = ex.evaluate(rows, model, build_duct(cfg))
    io.write_table(out / "eval_frames.csv", ex.EVAL_COLUMNS, frame)
    io.write_records(out / "eval_summary.csv", summary,
                     ("estimator", "axis", "n", "median", "p05", "p95", "median_abs"))
    for s in summary:
        print(f"{s['estimator']:>9} {s['axis']}: median {1000 * s['median']:+.2f} mm, "
              f"[5%, 95%] = [{1000 * s['p05']:+.2f}, {1000 * s['p95']:+.2f}] mm, |e| median {1000 * s['median_abs']:.2f} mm")


def cmd_hover(args, cfg, out):
    est = args.estimator or cfg["estimator.kind"]
    model = _model(args, cfg, out, required=est == "mlp")
    res, s = ex.hover(cfg, model, args.altitude, not args.no_field, est, duration=args.duration)
    io.write_flight_log(out / "hover_log.csv", LOG_COLUMNS, res.log, _flight_meta(cfg, res, {"estimator": est}))
    io.write_records(out / "hover_summary.csv", [s])
    print(_fmt_summary(s))


def cmd_sweep(args, cfg, out):
    est = args.estimator or cfg["estimator.kind"]
    model = _model(args, cfg, out, required=est == "mlp")
    per_alt, per_run = ex.sweep(cfg, model, args.altitudes, args.runs, args.duration, not args.no_field, est)
    io.write_records(out / "sweep_summary.csv", per_alt, ex.SWEEP_COLUMNS)
    io.write_records(out / "sweep_runs.csv", per_run)
    for r in per_alt:
        print(f"altitude {100 * r['altitude']:.1f} cm: lateral IQR {1000 * r['lat_iqr']:.2f} mm, "
              f"median {1000 * r['lat_median']:+.2f} mm, collisions {r['collisions']}/{r['runs']}")


def cmd_forcemap(args, cfg, out):
    raw_dir = Path(args.raw_dir or cfg["forcemap.raw_dir"] or (out / "raw"))
    if args.synthesize:
        # coarse grid and a modest rate keep the demo records small on disk
        fld = ex.demo_field(cfg, ny=8, nz=6)
        recs = ex.synthetic_raw_records(fld, seconds_in=10.0, seconds_out=cfg["forcemap.baseline"], fs=500.0,
                                        seed=cfg["seed"])
        for (y, z), rec in recs.items():
            io.write_raw_record(raw_dir / io.raw_record_name(y, z), rec)
    fld = ex.forcemap(cfg, io.read_raw_dir(raw_dir))
    io.write_force_field(out / "forcemap.csv", fld)
    from .plots import plot_forcemap
    plot_forcemap(out / "forcemap.csv", out / "forcemap.svg")
    print(f"wrote {out / 'forcemap.csv'} ({len(fld.ys)} x {len(fld.zs)} cells), max |F| {fld.max_magnitude():.4f} N")


def cmd_inout(args, cfg, out):
    est = args.estimator or cfg["inout.estimator"]
    model = _model(args, cfg, out, required=est == "mlp")
    inside, outside, summary = ex.inside_outside(cfg, model, args.altitude, args.duration, est)
    for name, res in (("inside", inside), ("outside", outside)):
        io.write_flight_log(out / f"inout_{name}.csv", LOG_COLUMNS, res.log,
                            _flight_meta(cfg, res, {"estimator": est, "condition": name}))
    io.write_records(out / "inout_summary.csv", summary)
    for s in summary:
        print(_fmt_summary(s))


def cmd_plot(args, cfg, out):
    from .plots import plot
    target = out / (Path(args.input).stem + ".svg") if getattr(args, "out", None) else None
    print(f"wrote {plot(args.input, args.kind, target)}")


COMMANDS = {"gen-dataset": cmd_gen_dataset, "train": cmd_train, "eval": cmd_eval, "hover": cmd_hover,
            "sweep": cmd_sweep, "forcemap": cmd_forcemap, "inout": cmd_inout, "plot": cmd_plot}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return 0
        if args.command is None:
            parser.print_help()
            return 2
        COMMANDS[args.command](args, cfg, _out(args))
    except DuctFlightError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
