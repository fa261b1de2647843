"""Command-line entry point.

    porflow simulate|train|infer|compare|bench|sweep --config <path>
            [--out <dir>] [--seed <u64>] [--sigma <f>] [--max-epochs <n>]

Exit codes: 0 success, 2 config error, 3 solver non-convergence, 4 training
divergence.  ``PORFLOW_THREADS`` caps internal parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoints as ckpt_io
from . import metrics, report, training
from .config import CaseConfig, gen_control_suite, load_config, suite_from_config
from .core import ControlSchedule, GridSpec, ReservoirCase, RockModel, State
from .errors import DivergedTraining, NonConvergence, ParseError, PorflowError, ValidationError
from .network import build_model
from .newton import NewtonSolver, StepDiagnostics, Trajectory


def _load_trajectory(path) -> Trajectory:
    data = np.load(path)
    states = [
        State(pressure=data["pressure"][k], sw=data["saturation"][k])
        for k in range(data["pressure"].shape[0])
    ]
    times = data["times"]
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    diags = [
        StepDiagnostics(step=k, newton_iters=0, residual_norms=[], wall_time=0.0)
        for k in range(1, len(states))
    ]
    return Trajectory(states=states, diagnostics=diags, dt=dt)


def _apply_overrides(cfg: CaseConfig, args) -> CaseConfig:
    if args.out:
        cfg.output_dir = Path(args.out)
        cfg.resolved["output_dir"] = str(cfg.output_dir)
    trainer_updates = {}
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.resolved["seed"] = args.seed
        trainer_updates["seed"] = args.seed
    if args.sigma is not None:
        trainer_updates["sigma"] = args.sigma
    if args.max_epochs is not None:
        trainer_updates["max_epochs"] = args.max_epochs
    if trainer_updates:
        cfg.trainer = dataclasses.replace(cfg.trainer, **trainer_updates)
        cfg.resolved["trainer"].update(trainer_updates)
    return cfg


def _dump_resolved(cfg: CaseConfig):
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(cfg.resolved_dump())
    report.write_run_manifest(out, cfg.resolved, cfg.seed)


def cmd_simulate(cfg: CaseConfig) -> int:
    solver = NewtonSolver(cfg.case, cfg.solver)
    traj = solver.simulate(cfg.schedule)
    out = cfg.output_dir / "newton"
    report.export_trajectory(traj, out)
    rasters = [
        report.export_field_raster(traj.states[-1].pressure, out / "final_pressure.png"),
        report.export_field_raster(traj.states[-1].sw, out / "final_saturation.png"),
        report.export_field_raster(cfg.case.rock.perm, out / "permeability.png"),
    ]
    audit = metrics.mass_balance_audit(traj, cfg.case, cfg.schedule)
    (out / "mass_balance.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")
    (out / "rasters.json").write_text(json.dumps(rasters, indent=2, sort_keys=True) + "\n")
    print(f"simulate: {cfg.schedule.n_steps} steps -> {out}")
    print(f"  mass-balance relative imbalance: {audit['relative_imbalance']:.3e}")
    return 0


def _train(cfg: CaseConfig, observations=None):
    run = training.train_all(
        cfg.case,
        cfg.schedule,
        cfg.trainer,
        net_spec=cfg.net_spec,
        scaling=cfg.scaling,
        bounds=cfg.bounds,
        observations=observations,
    )
    return run


def cmd_train(cfg: CaseConfig) -> int:
    run = _train(cfg)
    out = cfg.output_dir
    ckpt_io.save_checkpoints(run.checkpoints, out / "checkpoints")
    report.export_trajectory(run.trajectory, out / "train")
    rows = [
        [k + 1, run.epochs[k], run.losses[k]] for k in range(len(run.epochs))
    ]
    # Wall times stay in train/diagnostics.csv; this file is pure metrics so
    # reruns with the same seed reproduce it byte for byte.
    report.write_csv(
        out / "train" / "loss_log.csv",
        ["step", "epochs_used", "final_loss"],
        rows,
    )
    print(f"train: {len(run.epochs)} steps, epochs per step {run.epochs} -> {out}")
    return 0


def cmd_infer(cfg: CaseConfig) -> int:
    cs = ckpt_io.load_checkpoints(cfg.output_dir / "checkpoints")
    traj = training.infer_trajectory(cs, cfg.schedule, cfg.case)
    report.export_trajectory(traj, cfg.output_dir / "infer")
    print(f"infer: {cfg.schedule.n_steps} steps -> {cfg.output_dir / 'infer'}")
    return 0


def cmd_compare(cfg: CaseConfig) -> int:
    out = cfg.output_dir
    ref_npz = out / "newton" / "trajectory.npz"
    if not ref_npz.exists():
        cmd_simulate(cfg)
    pred_npz = out / "infer" / "trajectory.npz"
    if not pred_npz.exists():
        cmd_infer(cfg)
    ref = _load_trajectory(ref_npz)
    pred = _load_trajectory(pred_npz)
    rep = metrics.compare_trajectories(ref, pred, cfg.case, cfg.schedule)
    cmp_dir = out / "compare"
    report.export_error_report(rep, cmp_dir)
    rasters = []
    last = len(ref.states) - 1
    for k in sorted({max(1, last // 5), last // 2, last}):
        err_p = metrics.relative_error_map(pred.states[k].pressure, ref.states[k].pressure)
        err_s = metrics.relative_error_map(pred.states[k].sw, ref.states[k].sw)
        rasters.append(report.export_field_raster(err_p, cmp_dir / f"error_pressure_step{k:04d}.png"))
        rasters.append(report.export_field_raster(err_s, cmp_dir / f"error_saturation_step{k:04d}.png"))
        rasters.append(report.export_field_raster(pred.states[k].pressure, cmp_dir / f"pred_pressure_step{k:04d}.png"))
        rasters.append(report.export_field_raster(pred.states[k].sw, cmp_dir / f"pred_saturation_step{k:04d}.png"))
    (cmp_dir / "rasters.json").write_text(json.dumps(rasters, indent=2, sort_keys=True) + "\n")
    report.plot_mape_curves([rep], [cfg.name], cmp_dir / "mape_curves.png")
    report.plot_well_curves(rep, cmp_dir / "well_curves.png")
    print(
        f"compare: mean MAPE pressure {rep.mean_mape_pressure:.4g}, "
        f"saturation {rep.mean_mape_saturation:.4g} -> {cmp_dir}"
    )
    return 0


_BENCH_SIZES = (64, 100, 150)


def cmd_bench(cfg: CaseConfig, sizes=_BENCH_SIZES, n_steps: int = 2) -> int:
    """Timing table across grid sizes (homogeneous properties, wells rescaled)."""
    import torch

    from .network import NormalizationBounds, rasterize_controls

    rows = []
    base = cfg.case
    for size in sizes:
        grid = GridSpec(nx=size, ny=size, dx=base.grid.dx, dy=base.grid.dy, dz=base.grid.dz)
        rock = RockModel.create(
            grid, float(np.median(base.rock.perm)), float(np.median(base.rock.porosity)),
            base.rock.rock_compressibility,
        )
        init = State.create(
            grid,
            float(np.max(base.initial_state.pressure)),
            float(np.min(base.initial_state.sw)),
        )
        scale = lambda v, n: min(n - 2, max(1, round(v * size / base.grid.nx)))  # noqa: E731
        wells = tuple(
            dataclasses.replace(w, i=scale(w.i, size), j=scale(w.j, size))
            for w in base.wells
        )
        case = ReservoirCase(
            grid=grid, rock=rock, fluid=base.fluid, relperm=base.relperm,
            wells=wells, initial_state=init, units=base.units,
            harmonic_mode=base.harmonic_mode,
        )
        dt = 3.0 if size >= 150 else cfg.schedule.dt
        schedule = ControlSchedule.create(
            dt, n_steps, {name: vals[:n_steps] for name, vals in cfg.schedule.values.items()}
        )
        solver = NewtonSolver(case, cfg.solver)
        traj = solver.simulate(schedule)
        newton_t = float(np.median([d.wall_time for d in traj.diagnostics]))

        scaling = training.default_scaling(case, schedule)
        model = build_model(cfg.net_spec, scaling, dtype=torch.float32, seed=cfg.seed)
        image = torch.from_numpy(
            rasterize_controls(list(wells), schedule.at(1), grid, cfg.bounds)
        ).to(torch.float32)
        with torch.no_grad():
            model(image)  # warm-up
            samples = []
            for _ in range(3):
                t0 = time.perf_counter()
                model(image)
                samples.append(time.perf_counter() - t0)
        rows.append(
            metrics.BenchRow(
                label=f"{size}x{size}",
                n_cells=grid.n_cells,
                dofs=2 * grid.n_cells,
                parameter_count=model.parameter_count(),
                newton_step_seconds=newton_t,
                inference_step_seconds=float(np.median(samples)),
            )
        )
    table = metrics.speedup_report(rows)
    out = cfg.output_dir / "bench"
    header = list(table[0].keys())
    report.write_csv(out / "bench.csv", header, ([r[h] for h in header] for r in table))
    for r in table:
        print(
            f"bench {r['case']}: dofs={r['dofs']} params={r['parameters']} "
            f"newton={r['newton_step_s']:.3g}s infer={r['inference_step_s']:.3g}s "
            f"speedup={r['speedup']:.3g}"
        )
    return 0


def cmd_sweep(cfg: CaseConfig, periods=None) -> int:
    """Generalization sweeps: inference on unseen control ensembles."""
    cs = ckpt_io.load_checkpoints(cfg.output_dir / "checkpoints")
    sweep_cfg = cfg.sweep or {}
    if periods is None:
        periods = sweep_cfg.get("periods", [50.0, 10.0])
    solver = NewtonSolver(cfg.case, cfg.solver)
    out = cfg.output_dir / "sweep"
    summary_rows = []
    all_reports, all_labels = [], []
    for period in periods:
        suite = suite_from_config(cfg, period_days=period)
        schedules = gen_control_suite(suite)
        reports = []
        for idx, schedule in enumerate(schedules):
            ref = solver.simulate(schedule)
            pred = training.infer_trajectory(cs, schedule, cfg.case)
            rep = metrics.compare_trajectories(ref, pred, cfg.case)
            reports.append(rep)
            report.export_error_report(
                rep, out / f"period_{period:g}", prefix=f"schedule_{idx:02d}_"
            )
        mean_p = float(np.mean([r.mean_mape_pressure for r in reports]))
        mean_s = float(np.mean([r.mean_mape_saturation for r in reports]))
        summary_rows.append([period, len(schedules), mean_p, mean_s])
        all_reports += reports
        all_labels += [f"period {period:g}d #{i}" for i in range(len(reports))]
        report.plot_mape_curves(
            reports,
            [f"#{i}" for i in range(len(reports))],
            out / f"period_{period:g}" / "mape_ensemble.png",
            title=f"controls altered every {period:g} days",
        )
        print(
            f"sweep period {period:g}d: mean MAPE pressure {mean_p:.4g}, "
            f"saturation {mean_s:.4g}"
        )
    report.write_csv(
        out / "summary.csv",
        ["period_days", "n_schedules", "mean_mape_pressure", "mean_mape_saturation"],
        summary_rows,
    )
    return 0


def _error_record(out_dir: Path, kind: str, exc: Exception):
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.json").write_text(
            json.dumps({"error": kind, "message": str(exc)}, indent=2) + "\n"
        )
    except OSError:
        pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="porflow", description=__doc__)
    parser.add_argument(
        "command",
        choices=["simulate", "train", "infer", "compare", "bench", "sweep"],
    )
    parser.add_argument("--config", required=True, help="case config file (YAML)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="random seed override")
    parser.add_argument("--sigma", type=float, help="training accuracy override")
    parser.add_argument("--max-epochs", type=int, help="per-step epoch cap override")
    args = parser.parse_args(argv)

    threads = os.environ.get("PORFLOW_THREADS")
    if threads:
        import torch

        torch.set_num_threads(max(1, int(threads)))

    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        _dump_resolved(cfg)
        handler = {
            "simulate": cmd_simulate,
            "train": cmd_train,
            "infer": cmd_infer,
            "compare": cmd_compare,
            "bench": cmd_bench,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg)
    except NonConvergence as exc:
        _error_record(cfg.output_dir, "non_convergence", exc)
        print(f"solver non-convergence: {exc}", file=sys.stderr)
        return 3
    except DivergedTraining as exc:
        _error_record(cfg.output_dir, "diverged_training", exc)
        print(f"training divergence: {exc}", file=sys.stderr)
        return 4
    except PorflowError as exc:
        _error_record(cfg.output_dir, type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
