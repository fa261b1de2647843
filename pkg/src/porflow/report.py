"""Artifact export: delimited output, lossless field rasters, figures.

All delimited output is UTF-8 CSV with a header row.  Floats are written with
``repr`` (shortest round-trip form), so re-exporting identical artifacts
produces byte-identical files.  Field rasters are written 1:1 (one pixel per
cell) as lossless PNGs under a fixed perceptually-uniform colormap (viridis);
the per-field min/max used for normalization is recorded in the run manifest.
Curve figures (MAPE over time, well observables) are rendered with
matplotlib alongside the CSVs.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import image as mpimg

from .errors import IoError
from .metrics import ErrorReport
from .newton import Trajectory

COLORMAP = "viridis"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise IoError(f"failed to write {path}: {exc}") from exc
    return path


def export_trajectory(traj: Trajectory, out_dir, prefix: str = "") -> dict[str, Path]:
    """Per-step CSVs (cells flattened row-major) plus a compact .npz snapshot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not traj.states:
        files = {
            label: write_csv(out / f"{prefix}{label}.csv", ["step", "time_days"], [])
            for label in ("pressure", "saturation")
        }
        files["diagnostics"] = write_csv(
            out / f"{prefix}diagnostics.csv",
            ["step", "iterations", "wall_time_s", "dt_cuts"],
            [],
        )
        return files
    p_stack = traj.pressure_stack()
    s_stack = traj.sw_stack()
    n_cells = p_stack[0].size
    header = ["step", "time_days"] + [f"cell_{c:05d}" for c in range(n_cells)]
    files = {}
    for label, stack in (("pressure", p_stack), ("saturation", s_stack)):
        rows = (
            [k, k * traj.dt] + [float(v) for v in stack[k].ravel()]
            for k in range(len(stack))
        )
        files[label] = write_csv(out / f"{prefix}{label}.csv", header, rows)
    diag_rows = [
        [d.step, d.newton_iters, d.wall_time, d.dt_cuts if hasattr(d, "dt_cuts") else 0]
        for d in traj.diagnostics
    ]
    files["diagnostics"] = write_csv(
        out / f"{prefix}diagnostics.csv",
        ["step", "iterations", "wall_time_s", "dt_cuts"],
        diag_rows,
    )
    npz_path = out / f"{prefix}trajectory.npz"
    np.savez_compressed(
        npz_path, pressure=p_stack, saturation=s_stack, times=traj.times
    )
    files["snapshot"] = npz_path
    return files


def export_field_raster(field, path, vmin=None, vmax=None) -> dict:
    """Write a field as a 1:1 lossless PNG; returns the normalization used."""
    field = np.asarray(field, dtype=float)
    vmin = float(np.min(field)) if vmin is None else vmin
    vmax = float(np.max(field)) if vmax is None else vmax
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        mpimg.imsave(
            path, field, vmin=vmin, vmax=vmax if vmax > vmin else vmin + 1.0,
            cmap=COLORMAP, origin="lower", format="png",
        )
    except OSError as exc:
        raise IoError(f"failed to write {path}: {exc}") from exc
    return {"file": path.name, "vmin": vmin, "vmax": vmax, "colormap": COLORMAP}


def export_error_report(report: ErrorReport, out_dir, prefix: str = "") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    rows = [
        [k + 1, float(report.times[k]), float(report.mape_pressure[k]),
         float(report.mape_saturation[k])]
        for k in range(len(report.times))
    ]
    files["mape"] = write_csv(
        out / f"{prefix}mape.csv",
        ["step", "time_days", "mape_pressure", "mape_saturation"],
        rows,
    )
    if report.well_rows:
        header = list(report.well_rows[0].keys())
        files["wells"] = write_csv(
            out / f"{prefix}wells.csv",
            header,
            ([r[h] for h in header] for r in report.well_rows),
        )
    return files


def plot_mape_curves(reports, labels, path, title="normalized MAE over time"):
    """MAPE-vs-time figure; one curve pair (pressure, saturation) per report."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for report, label in zip(reports, labels):
        axes[0].plot(report.times, report.mape_pressure, label=label)
        axes[1].plot(report.times, report.mape_saturation, label=label)
    for ax, what in zip(axes, ("pressure", "saturation")):
        ax.set_xlabel("time, days")
        ax.set_ylabel(f"MAPE ({what})")
        ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    if len(labels) <= 12:
        axes[0].legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_well_curves(report: ErrorReport, path):
    """Reference vs predicted WBP and oil rate per producer."""
    if not report.well_rows:
        return None
    names = sorted({r["well"] for r in report.well_rows})
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for name in names:
        rows = [r for r in report.well_rows if r["well"] == name]
        t = [r["step"] for r in rows]
        axes[0].plot(t, [r["wbp_ref"] for r in rows], label=f"{name} ref")
        axes[0].plot(t, [r["wbp_pred"] for r in rows], "--", label=f"{name} pred")
        axes[1].plot(t, [r["oil_rate_ref"] for r in rows], label=f"{name} ref")
        axes[1].plot(t, [r["oil_rate_pred"] for r in rows], "--", label=f"{name} pred")
    axes[0].set_ylabel("well-block pressure, psia")
    axes[1].set_ylabel("oil rate, STB/day")
    for ax in axes:
        ax.set_xlabel("step")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_run_manifest(out_dir, config_resolved: dict, seed: int, extra=None) -> Path:
    """Run manifest: config hash, seed, library versions; timestamp-free."""
    import scipy
    import torch

    cfg_text = json.dumps(config_resolved, sort_keys=True, default=str)
    manifest = {
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
