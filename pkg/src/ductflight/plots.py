"""Static SVG figures from the CSV outputs (presentation only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle, Ellipse, Rectangle  # noqa: E402

from .geometry import CircularDuct, duct_from_dict  # noqa: E402
from .io import FIELD_COLUMNS, read_flight_log, read_force_field, read_records, read_table, sidecar  # noqa: E402

KINDS = ("forcemap", "errors", "scatter", "sweep")

# svg output must not depend on the wall clock or a random hash salt
plt.rcParams["svg.hashsalt"] = "ductflight"
plt.rcParams["svg.fonttype"] = "none"


def _duct_patch(duct, shift: float = 0.0):
    if isinstance(duct, CircularDuct):
        return Circle((0.0, shift), duct.radius, fill=False, lw=1.2, color="0.3")
    return Rectangle((-0.5 * duct.width, -0.5 * duct.height + shift), duct.width, duct.height,
                     fill=False, lw=1.2, color="0.3")


def _save(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def plot_forcemap(csv_path, out) -> Path:
    """Arrows for the mean force, 1-sigma covariance ellipses, colour for magnitude."""
    fld = read_force_field(csv_path)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_patch(_duct_patch(fld.duct))
    ys, zs = np.meshgrid(fld.ys, fld.zs, indexing="ij")
    fy, fz = fld.mean[..., 0], fld.mean[..., 1]
    mag = np.hypot(fy, fz)
    scale = 0.6 * min(np.diff(fld.ys).min(), np.diff(fld.zs).min()) / max(mag.max(), 1e-12)
    q = ax.quiver(ys, zs, fy, fz, mag, angles="xy", scale_units="xy", scale=1.0 / scale, cmap="viridis")
    for i in range(len(fld.ys)):
        for j in range(len(fld.zs)):
            c = fld.cov[i, j]
            w, v = np.linalg.eigh(np.array([[c[0], c[1]], [c[1], c[2]]]))
            w = np.sqrt(np.clip(w, 0, None)) * scale
            ang = np.degrees(np.arctan2(v[1, 1], v[0, 1]))
            ax.add_patch(Ellipse((fld.ys[i] + fy[i, j] * scale, fld.zs[j] + fz[i, j] * scale),
                                 2 * w[1], 2 * w[0], angle=ang, fill=False, lw=0.5, color="tab:red"))
    fig.colorbar(q, ax=ax, label="|F| (N)")
    ax.set_aspect("equal")
    ax.set_xlabel("y (m)")
    ax.set_ylabel("z (m, axis frame)")
    return _save(fig, out)


def plot_errors(csv_path, out) -> Path:
    """Boxplots (5-95 % whiskers) of per-frame estimator errors."""
    header, d = read_table(csv_path)
    col = {c: k for k, c in enumerate(header)}
    series, names = [], []
    for est, py, pz in (("mlp", "nn_y", "nn_z"), ("geometric", "geo_y", "geo_z")):
        ok = np.isfinite(d[:, col[py]])
        if est == "geometric":
            ok &= d[:, col["geo_valid"]] > 0
        if ok.any():
            series += [1000 * (d[ok, col[py]] - d[ok, col["y"]]), 1000 * (d[ok, col[pz]] - d[ok, col["z"]])]
            names += [f"{est} y", f"{est} z"]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot(series, whis=(5, 95), showfliers=False)
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_ylabel("error (mm)")
    return _save(fig, out)


def plot_scatter(csv_path, out) -> Path:
    """Cross-section trace of a flight in the bottom-centered frame."""
    header, d, meta = read_flight_log(csv_path)
    col = {c: k for k, c in enumerate(header)}
    duct = duct_from_dict(meta["duct"]) if "duct" in meta else None
    shift = duct.half_height if duct is not None else 0.0
    fig, ax = plt.subplots(figsize=(5, 5))
    if duct is not None:
        ax.add_patch(_duct_patch(duct, shift))
    ax.plot(d[:, col["y"]], d[:, col["z"]] + shift, ".", ms=1, alpha=0.3)
    ax.set_aspect("equal")
    ax.set_xlabel("y (m)")
    ax.set_ylabel("z (m, bottom frame)")
    return _save(fig, out)


def plot_sweep(csv_path, out) -> Path:
    """Lateral median with IQR and 5-95 % bands against altitude."""
    rows = sorted(read_records(csv_path), key=lambda r: r["altitude"])
    alt = 100 * np.array([r["altitude"] for r in rows])
    get = lambda k: 1000 * np.array([r[k] for r in rows])  # noqa: E731
    fig, ax = plt.subplots(figsize=(4, 5))
    ax.fill_betweenx(alt, get("lat_p05"), get("lat_p95"), alpha=0.2, label="5-95 %")
    ax.fill_betweenx(alt, get("lat_p25"), get("lat_p75"), alpha=0.5, label="IQR")
    ax.plot(get("lat_median"), alt, "k.-", label="median")
    ax.set_xlabel("lateral position (mm)")
    ax.set_ylabel("altitude (cm, bottom frame)")
    ax.legend()
    return _save(fig, out)


def guess_kind(csv_path) -> str:
    with Path(csv_path).open() as fh:
        header = tuple(fh.readline().strip().split(","))
    if header == FIELD_COLUMNS:
        return "forcemap"
    if "geo_valid" in header and "nn_y" in header and "cmd0" not in header:
        return "errors"
    if "lat_iqr" in header:
        return "sweep"
    if "cmd0" in header or sidecar(csv_path).exists():
        return "scatter"
    raise ValueError(f"cannot tell what to plot from {csv_path}")


def plot(csv_path, kind=None, out=None) -> Path:
    kind = kind or guess_kind(csv_path)
    out = out or Path(csv_path).with_suffix(".svg")
    fn = {"forcemap": plot_forcemap, "errors": plot_errors, "scatter": plot_scatter, "sweep": plot_sweep}.get(kind)
    if fn is None:
        raise ValueError(f"plot kind must be one of {KINDS}")
    return fn(csv_path, out)
