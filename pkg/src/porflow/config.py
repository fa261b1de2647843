"""Case configuration: YAML loading, validation, defaults, schedule generation.

The config grammar is YAML (nested key/value); see the bundled ``cases/*.case``
files and the README for the full schema.  Loading applies unit conversions
(metric cell sizes to ft), materializes every default, and produces a
resolved-config dictionary that is itself a valid, loadable config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from .core import (
    ControlSchedule,
    CoreyRelPerm,
    FluidModel,
    GridSpec,
    PhaseProps,
    ReservoirCase,
    RockModel,
    State,
    WellKind,
    WellSpec,
    validate_schedule,
    validate_wells,
)
from .errors import ParseError, ValidationError
from .network import NetworkSpec, NormalizationBounds, ScalingParams
from .newton import NewtonConfig
from .training import TrainerConfig
from .units import UnitConstants

DEFAULT_WATER_VISCOSITY = 1.0  # cp; never stated in the source material


def lognormal_perm_field(
    ny: int, nx: int, mean_md: float, log_std: float, correlation_cells: float, seed: int
) -> np.ndarray:
    """Seeded log-normal permeability with Gaussian spatial correlation.

    ``mean_md`` is the geometric mean; ``log_std`` the standard deviation of
    log-permeability after smoothing.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((ny, nx))
    if correlation_cells > 0:
        z = gaussian_filter(z, sigma=correlation_cells, mode="reflect")
    std = z.std()
    if std > 0:
        z = (z - z.mean()) / std
    return mean_md * np.exp(log_std * z)


@dataclass(frozen=True)
class ControlSuite:
    """Recipe for an ensemble of piecewise-constant random control schedules."""

    n_schedules: int
    dt: float
    n_steps: int
    period_days: float
    rate_range: tuple[float, float]
    bhp_range: tuple[float, float]
    seed: int
    injector_names: tuple[str, ...]
    producer_names: tuple[str, ...]

    def __post_init__(self):
        if self.n_schedules < 1 or self.n_steps < 1 or self.dt <= 0:
            raise ValidationError("suite counts and dt must be positive")
        steps_per_period = self.period_days / self.dt
        if abs(steps_per_period - round(steps_per_period)) > 1e-9:
            raise ValidationError(
                f"alteration period {self.period_days} is not a multiple of dt {self.dt}"
            )


def _piecewise(rng, n_steps, steps_per_period, lo, hi):
    n_segments = math.ceil(n_steps / steps_per_period)
    seg_vals = rng.uniform(lo, hi, size=n_segments)
    return np.repeat(seg_vals, steps_per_period)[:n_steps]


def gen_control_suite(suite: ControlSuite) -> list[ControlSchedule]:
    """Deterministic-under-seed ensemble of control schedules."""
    rng = np.random.default_rng(suite.seed)
    steps_per_period = max(1, round(suite.period_days / suite.dt))
    out = []
    for _ in range(suite.n_schedules):
        values = {}
        for name in suite.injector_names:
            values[name] = _piecewise(
                rng, suite.n_steps, steps_per_period, *suite.rate_range
            )
        for name in suite.producer_names:
            values[name] = _piecewise(
                rng, suite.n_steps, steps_per_period, *suite.bhp_range
            )
        out.append(ControlSchedule.create(suite.dt, suite.n_steps, values))
    return out


@dataclass
class CaseConfig:
    """Fully validated run configuration with all defaults materialized."""

    name: str
    case: ReservoirCase
    schedule: ControlSchedule
    solver: NewtonConfig
    trainer: TrainerConfig
    net_spec: NetworkSpec
    scaling: ScalingParams | None
    bounds: NormalizationBounds
    seed: int
    output_dir: Path
    resolved: dict = field(default_factory=dict)
    sweep: dict | None = None

    def resolved_dump(self) -> str:
        return yaml.safe_dump(self.resolved, sort_keys=True)


def _req(section: dict, key: str, where: str):
    if key not in section:
        raise ValidationError(f"{where}: missing required field '{key}'")
    return section[key]


def _build_grid(cfg: dict, units: UnitConstants) -> GridSpec:
    g = _req(cfg, "grid", "config")
    unit = g.get("length_unit", "ft")
    if unit not in ("ft", "m"):
        raise ValidationError(f"grid.length_unit: unknown unit '{unit}'")
    conv = units.ft_per_m if unit == "m" else 1.0
    return GridSpec(
        nx=int(_req(g, "nx", "grid")),
        ny=int(_req(g, "ny", "grid")),
        dx=float(_req(g, "dx", "grid")) * conv,
        dy=float(_req(g, "dy", "grid")) * conv,
        dz=float(_req(g, "dz", "grid")) * conv,
    )


def _build_perm(pcfg, grid: GridSpec, base_dir: Path) -> np.ndarray:
    if isinstance(pcfg, (int, float)):
        pcfg = {"kind": "uniform", "value_md": float(pcfg)}
    kind = pcfg.get("kind", "uniform")
    if kind == "uniform":
        return np.full(grid.shape, float(_req(pcfg, "value_md", "rock.permeability")))
    if kind == "lognormal":
        return lognormal_perm_field(
            grid.ny,
            grid.nx,
            mean_md=float(pcfg.get("mean_md", 100.0)),
            log_std=float(pcfg.get("log_std", 1.0)),
            correlation_cells=float(pcfg.get("correlation_cells", 3.0)),
            seed=int(pcfg.get("seed", 0)),
        )
    if kind == "file":
        path = base_dir / _req(pcfg, "path", "rock.permeability")
        if not path.exists():
            raise ValidationError(f"rock.permeability.path: file not found: {path}")
        arr = np.loadtxt(path, delimiter=",")
        if arr.shape != grid.shape:
            raise ValidationError(
                f"rock.permeability file shape {arr.shape} != grid {grid.shape}"
            )
        return arr
    raise ValidationError(f"rock.permeability.kind: unknown kind '{kind}'")


def _build_wells(cfg: dict, grid: GridSpec) -> tuple[WellSpec, ...]:
    wells = []
    for w in _req(cfg, "wells", "config"):
        name = _req(w, "name", "wells[]")
        kind_str = _req(w, "type", f"well {name}")
        try:
            kind = {
                "injector": WellKind.RATE_CONTROLLED_INJECTOR,
                "producer": WellKind.BHP_CONTROLLED_PRODUCER,
            }[kind_str]
        except KeyError:
            raise ValidationError(f"well {name}: unknown type '{kind_str}'") from None
        i, j = int(_req(w, "i", f"well {name}")), int(_req(w, "j", f"well {name}"))
        if not (0 <= i < grid.nx and 0 <= j < grid.ny):
            raise ValidationError(
                f"well {name}: cell ({i}, {j}) outside {grid.nx}x{grid.ny} grid"
            )
        wells.append(
            WellSpec(
                name=name,
                kind=kind,
                i=i,
                j=j,
                r_w=float(w.get("r_w", 0.3)),
                skin=float(w.get("skin", 0.0)),
            )
        )
    return tuple(wells)


def _build_schedule(cfg: dict, wells) -> tuple[ControlSchedule, dict]:
    s = _req(cfg, "schedule", "config")
    dt = float(_req(s, "dt", "schedule"))
    n_steps = int(_req(s, "n_steps", "schedule"))
    injectors = [w.name for w in wells if w.is_injector]
    producers = [w.name for w in wells if not w.is_injector]
    if "values" in s:
        values = {k: np.asarray(v, dtype=float) for k, v in s["values"].items()}
        resolved = {
            "dt": dt,
            "n_steps": n_steps,
            "values": {k: [float(x) for x in v] for k, v in values.items()},
        }
        return ControlSchedule.create(dt, n_steps, values), resolved
    suite = ControlSuite(
        n_schedules=1,
        dt=dt,
        n_steps=n_steps,
        period_days=float(s.get("period_days", dt * n_steps)),
        rate_range=tuple(s.get("rate_range", (1000.0, 1500.0))),
        bhp_range=tuple(s.get("bhp_range", (2300.0, 2500.0))),
        seed=int(s.get("seed", 0)),
        injector_names=tuple(injectors),
        producer_names=tuple(producers),
    )
    schedule = gen_control_suite(suite)[0]
    resolved = {
        "dt": dt,
        "n_steps": n_steps,
        "period_days": suite.period_days,
        "rate_range": list(suite.rate_range),
        "bhp_range": list(suite.bhp_range),
        "seed": suite.seed,
    }
    return schedule, resolved


def _fluid_section(cfg: dict, initial_pressure: float):
    f = cfg.get("fluids", {})
    oil = f.get("oil", {})
    water = f.get("water", {})
    oil_props = PhaseProps(
        viscosity=float(oil.get("viscosity", 1.13)),
        compressibility=float(oil.get("compressibility", 1.0e-5)),
        fvf_ref=float(oil.get("fvf_ref", 1.0)),
        pressure_ref=float(oil.get("pressure_ref", initial_pressure)),
        density_ref=float(oil.get("density_ref", 0.0)),
    )
    water_props = PhaseProps(
        viscosity=float(water.get("viscosity", DEFAULT_WATER_VISCOSITY)),
        compressibility=float(water.get("compressibility", 3.0e-6)),
        fvf_ref=float(water.get("fvf_ref", 1.0)),
        pressure_ref=float(water.get("pressure_ref", initial_pressure)),
        density_ref=float(water.get("density_ref", 0.0)),
    )
    return FluidModel(oil=oil_props, water=water_props)


def load_config(path) -> CaseConfig:
    """Parse, validate and fully resolve a case config file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"{path}: invalid YAML{loc}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return build_config(raw, base_dir=path.parent)


def build_config(raw: dict, base_dir: Path | None = None) -> CaseConfig:
    base_dir = base_dir or Path.cwd()
    units = UnitConstants()
    grid = _build_grid(raw, units)

    rock_cfg = _req(raw, "rock", "config")
    perm = _build_perm(_req(rock_cfg, "permeability", "rock"), grid, base_dir)
    rock = RockModel.create(
        grid,
        perm,
        porosity=float(rock_cfg.get("porosity", 0.2)),
        rock_compressibility=float(rock_cfg.get("rock_compressibility", 3.0e-6)),
    )

    init_cfg = _req(raw, "initial", "config")
    p_init = float(_req(init_cfg, "pressure", "initial"))
    sw_init = float(_req(init_cfg, "sw", "initial"))
    initial = State.create(grid, p_init, sw_init)

    fluid = _fluid_section(raw, p_init)

    rp_cfg = raw.get("relperm", {})
    relperm = CoreyRelPerm(
        s_wc=float(rp_cfg.get("s_wc", 0.2)),
        s_or=float(rp_cfg.get("s_or", 0.2)),
        n_w=float(rp_cfg.get("n_w", 2.0)),
        n_o=float(rp_cfg.get("n_o", 3.0)),
        krw0=float(rp_cfg.get("krw0", 0.6)),
        kro0=float(rp_cfg.get("kro0", 0.9)),
    )

    wells = _build_wells(raw, grid)
    validate_wells(list(wells), grid)
    schedule, schedule_resolved = _build_schedule(raw, wells)
    validate_schedule(schedule, list(wells))

    case = ReservoirCase(
        grid=grid,
        rock=rock,
        fluid=fluid,
        relperm=relperm,
        wells=wells,
        initial_state=initial,
        units=units,
        harmonic_mode=raw.get("harmonic_mode", "paper"),
    )

    solver_cfg = raw.get("solver", {})
    solver = NewtonConfig(
        residual_tol=float(solver_cfg.get("residual_tol", 1e-6)),
        max_newton_iters=int(solver_cfg.get("max_newton_iters", 20)),
        jacobian_mode=solver_cfg.get("jacobian_mode", "fd"),
        damping=float(solver_cfg.get("damping", 0.2)),
        max_step_cuts=int(solver_cfg.get("max_step_cuts", 4)),
    )

    t_cfg = raw.get("trainer", {})
    trainer = TrainerConfig(
        lr0=float(t_cfg.get("lr0", 0.01)),
        lr_decay=float(t_cfg.get("lr_decay", 0.995)),
        lr_decay_every=int(t_cfg.get("lr_decay_every", 100)),
        smooth_l1_beta=float(t_cfg.get("smooth_l1_beta", 10.0)),
        sigma=float(t_cfg.get("sigma", 0.05)),
        max_epochs=int(t_cfg.get("max_epochs", 2000)),
        physics_weight=float(t_cfg.get("physics_weight", 1.0)),
        data_weight=float(t_cfg.get("data_weight", 0.01)),
        seed=int(t_cfg.get("seed", raw.get("seed", 0))),
        dtype=t_cfg.get("dtype", "<f8"),
    )
    net_spec = NetworkSpec(
        input_channels=2,
        depth=int(t_cfg.get("depth", 3)),
        base_channels=int(t_cfg.get("base_channels", 32)),
        convs_per_level=int(t_cfg.get("convs_per_level", 2)),
    )

    n_cfg = raw.get("normalization", {})
    bounds = NormalizationBounds(
        bhp_lo=float(n_cfg.get("bhp_lo", 2300.0)),
        bhp_hi=float(n_cfg.get("bhp_hi", 2500.0)),
        rate_hi=float(n_cfg.get("rate_hi", 1500.0)),
    )

    scaling = None
    if "scaling" in raw:
        sc = raw["scaling"]
        scaling = ScalingParams(
            s_wc=relperm.s_wc,
            s_or=relperm.s_or,
            p_min=float(_req(sc, "p_min", "scaling")),
            p_max=float(_req(sc, "p_max", "scaling")),
        )

    sweep = raw.get("sweep")
    name = raw.get("name", "case")
    seed = int(raw.get("seed", 0))
    output_dir = Path(raw.get("output_dir", f"runs/{name}"))

    resolved = {
        "name": name,
        "seed": seed,
        "output_dir": str(output_dir),
        "harmonic_mode": case.harmonic_mode,
        "grid": {
            "nx": grid.nx,
            "ny": grid.ny,
            "dx": grid.dx,
            "dy": grid.dy,
            "dz": grid.dz,
            "length_unit": "ft",
        },
        "rock": {
            "porosity": float(rock_cfg.get("porosity", 0.2)),
            "rock_compressibility": rock.rock_compressibility,
            "permeability": (
                _req(rock_cfg, "permeability", "rock")
                if isinstance(rock_cfg["permeability"], dict)
                else {"kind": "uniform", "value_md": float(rock_cfg["permeability"])}
            ),
        },
        "fluids": {
            "oil": {
                "viscosity": fluid.oil.viscosity,
                "compressibility": fluid.oil.compressibility,
                "fvf_ref": fluid.oil.fvf_ref,
                "pressure_ref": fluid.oil.pressure_ref,
            },
            "water": {
                "viscosity": fluid.water.viscosity,
                "compressibility": fluid.water.compressibility,
                "fvf_ref": fluid.water.fvf_ref,
                "pressure_ref": fluid.water.pressure_ref,
            },
        },
        "relperm": {
            "s_wc": relperm.s_wc,
            "s_or": relperm.s_or,
            "n_w": relperm.n_w,
            "n_o": relperm.n_o,
            "krw0": relperm.krw0,
            "kro0": relperm.kro0,
        },
        "initial": {"pressure": p_init, "sw": sw_init},
        "wells": [
            {
                "name": w.name,
                "type": "injector" if w.is_injector else "producer",
                "i": w.i,
                "j": w.j,
                "r_w": w.r_w,
                "skin": w.skin,
            }
            for w in wells
        ],
        "schedule": schedule_resolved,
        "solver": {
            "residual_tol": solver.residual_tol,
            "max_newton_iters": solver.max_newton_iters,
            "jacobian_mode": solver.jacobian_mode,
            "damping": solver.damping,
            "max_step_cuts": solver.max_step_cuts,
        },
        "trainer": {
            "lr0": trainer.lr0,
            "lr_decay": trainer.lr_decay,
            "lr_decay_every": trainer.lr_decay_every,
            "smooth_l1_beta": trainer.smooth_l1_beta,
            "sigma": trainer.sigma,
            "max_epochs": trainer.max_epochs,
            "physics_weight": trainer.physics_weight,
            "data_weight": trainer.data_weight,
            "seed": trainer.seed,
            "dtype": trainer.dtype,
            "depth": net_spec.depth,
            "base_channels": net_spec.base_channels,
            "convs_per_level": net_spec.convs_per_level,
        },
        "normalization": {
            "bhp_lo": bounds.bhp_lo,
            "bhp_hi": bounds.bhp_hi,
            "rate_hi": bounds.rate_hi,
        },
    }
    if scaling is not None:
        resolved["scaling"] = {"p_min": scaling.p_min, "p_max": scaling.p_max}
    if sweep is not None:
        resolved["sweep"] = sweep

    return CaseConfig(
        name=name,
        case=case,
        schedule=schedule,
        solver=solver,
        trainer=trainer,
        net_spec=net_spec,
        scaling=scaling,
        bounds=bounds,
        seed=seed,
        output_dir=output_dir,
        resolved=resolved,
        sweep=sweep,
    )


def suite_from_config(cfg: CaseConfig, period_days=None, n_schedules=None, seed=None) -> ControlSuite:
    """Sweep suite sharing the case's wells and timestep grid."""
    sweep = cfg.sweep or {}
    sched = cfg.resolved["schedule"]
    return ControlSuite(
        n_schedules=int(n_schedules or sweep.get("n_schedules", 10)),
        dt=cfg.schedule.dt,
        n_steps=cfg.schedule.n_steps,
        period_days=float(period_days or sweep.get("period_days", sched.get("period_days", cfg.schedule.total_time))),
        rate_range=tuple(sched.get("rate_range", (1000.0, 1500.0))),
        bhp_range=tuple(sched.get("bhp_range", (2300.0, 2500.0))),
        seed=int(seed if seed is not None else sweep.get("seed", cfg.seed + 1)),
        injector_names=tuple(w.name for w in cfg.case.injectors),
        producer_names=tuple(w.name for w in cfg.case.producers),
    )
