"""Physical case description: grid, rock, fluids, relative permeability, wells.

Conventions
-----------
Fields live on a 2D Cartesian grid as arrays of shape ``(ny, nx)``; the fixed
row-major linear index of cell ``(i, j)`` is ``j*nx + i`` (``i`` along x).
All quantities are in field units (psia, ft, cp, mD, STB/day, days).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _compat
from .errors import NonPhysicalFvf, ValidationError
from .units import UnitConstants


def _frozen_array(values, shape=None):
    """Broadcast to a read-only float64 array of the given shape."""
    arr = np.array(values, dtype=float)
    if shape is not None:
        arr = np.broadcast_to(arr, shape).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GridSpec:
    """Uniform Cartesian grid: cell counts and edge lengths in ft."""

    nx: int
    ny: int
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValidationError("grid cell counts must be >= 1")
        if self.dx <= 0 or self.dy <= 0 or self.dz <= 0:
            raise ValidationError("grid cell sizes must be > 0")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_volume(self) -> float:
        """Bulk cell volume in ft^3."""
        return self.dx * self.dy * self.dz

    def cell_index(self, i: int, j: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise ValidationError(f"cell ({i}, {j}) outside {self.nx}x{self.ny} grid")
        return j * self.nx + i


@dataclass(frozen=True)
class RockModel:
    """Isotropic permeability (mD), porosity and rock compressibility (1/psia)."""

    perm: np.ndarray
    porosity: np.ndarray
    rock_compressibility: float = 0.0

    @classmethod
    def create(cls, grid: GridSpec, perm, porosity, rock_compressibility=0.0):
        return cls(
            perm=_frozen_array(perm, grid.shape),
            porosity=_frozen_array(porosity, grid.shape),
            rock_compressibility=float(rock_compressibility),
        )

    def __post_init__(self):
        if np.any(self.perm <= 0):
            raise ValidationError("permeability must be positive everywhere")
        if np.any(self.porosity <= 0) or np.any(self.porosity >= 1):
            raise ValidationError("porosity must lie in (0, 1)")
        if self.rock_compressibility < 0:
            raise ValidationError("rock compressibility must be >= 0")


class Phase(enum.Enum):
    OIL = "oil"
    WATER = "water"


@dataclass(frozen=True)
class PhaseProps:
    """Slightly-compressible phase: constant viscosity, linearized FVF.

    Density is carried as metadata only; it cancels out of the surface-volume
    mass balance and never enters the residual.
    """

    viscosity: float
    compressibility: float = 0.0
    fvf_ref: float = 1.0
    pressure_ref: float = 3000.0
    density_ref: float = 0.0

    def __post_init__(self):
        if self.viscosity <= 0:
            raise ValidationError("viscosity must be > 0")
        if self.compressibility < 0:
            raise ValidationError("compressibility must be >= 0")
        if self.fvf_ref <= 0:
            raise ValidationError("reference FVF must be > 0")


@dataclass(frozen=True)
class FluidModel:
    oil: PhaseProps
    water: PhaseProps

    def props(self, phase: Phase) -> PhaseProps:
        return self.oil if phase is Phase.OIL else self.water


@dataclass(frozen=True)
class CoreyRelPerm:
    """Corey-type relative permeability parameters."""

    s_wc: float
    s_or: float
    n_w: float
    n_o: float
    krw0: float
    kro0: float

    def __post_init__(self):
        if not (0 <= self.s_wc < 1 and 0 <= self.s_or < 1):
            raise ValidationError("saturation endpoints must lie in [0, 1)")
        if self.s_wc + self.s_or >= 1:
            raise ValidationError("s_wc + s_or must be < 1")
        if self.n_w < 1 or self.n_o < 1:
            raise ValidationError("Corey exponents must be >= 1")
        if not (0 < self.krw0 <= 1 and 0 < self.kro0 <= 1):
            raise ValidationError("end-point relperms must lie in (0, 1]")

    @property
    def sw_max(self) -> float:
        return 1.0 - self.s_or


def corey_relperm(sw, model: CoreyRelPerm):
    """(krw, kro) at water saturation ``sw`` (scalar or array, numpy or torch).

    The normalized saturation is clamped to [0, 1] before exponentiation, so
    out-of-window inputs (e.g. Newton overshoot) degrade gracefully to the
    endpoint values instead of erroring.
    """
    span = 1.0 - model.s_or - model.s_wc
    s = _compat.clip((sw - model.s_wc) / span, 0.0, 1.0)
    krw = model.krw0 * s**model.n_w
    kro = model.kro0 * (1.0 - s) ** model.n_o
    return krw, kro


def fluid_props_at(p, phase: Phase, model: FluidModel):
    """(B, mu) at pressure ``p`` for the given phase.

    B(p) = B_ref / (1 + c*(p - P_ref)); viscosity is pressure-independent.
    """
    props = model.props(phase)
    denom = 1.0 + props.compressibility * (p - props.pressure_ref)
    bad = denom <= 0
    if bool(bad.any() if hasattr(bad, "any") else bad):
        raise NonPhysicalFvf(
            f"{phase.value} FVF denominator non-positive; pressure outside model validity"
        )
    return props.fvf_ref / denom, props.viscosity


class WellKind(enum.Enum):
    RATE_CONTROLLED_INJECTOR = "injector"
    BHP_CONTROLLED_PRODUCER = "producer"


@dataclass(frozen=True)
class WellSpec:
    name: str
    kind: WellKind
    i: int
    j: int
    r_w: float = 0.3
    skin: float = 0.0

    def __post_init__(self):
        if self.r_w <= 0:
            raise ValidationError(f"well {self.name}: wellbore radius must be > 0")

    @property
    def cell(self) -> tuple[int, int]:
        return (self.i, self.j)

    @property
    def is_injector(self) -> bool:
        return self.kind is WellKind.RATE_CONTROLLED_INJECTOR


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant per-well controls on the timestep grid.

    ``values[name][k-1]`` is the control for step ``k`` (k = 1..n_steps):
    injection rate in STB/day for injectors, BHP in psia for producers.
    """

    dt: float
    n_steps: int
    values: dict[str, np.ndarray]

    @classmethod
    def create(cls, dt, n_steps, values):
        frozen = {name: _frozen_array(v) for name, v in values.items()}
        return cls(dt=float(dt), n_steps=int(n_steps), values=frozen)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("timestep size must be > 0")
        if self.n_steps < 1:
            raise ValidationError("schedule must contain at least one step")
        for name, v in self.values.items():
            if len(v) != self.n_steps:
                raise ValidationError(
                    f"well {name}: {len(v)} control values for {self.n_steps} steps"
                )

    @property
    def total_time(self) -> float:
        return self.dt * self.n_steps

    def at(self, k: int) -> dict[str, float]:
        """Controls for step ``k`` (1-based)."""
        if not (1 <= k <= self.n_steps):
            raise ValidationError(f"step {k} outside schedule of length {self.n_steps}")
        return {name: float(v[k - 1]) for name, v in self.values.items()}


def validate_wells(wells: list[WellSpec], grid: GridSpec, relperm=None):
    """Bounds-check well placement and reject doubled-up cells."""
    seen = {}
    for w in wells:
        grid.cell_index(w.i, w.j)
        if w.cell in seen:
            raise ValidationError(
                f"wells {seen[w.cell]} and {w.name} share cell {w.cell}"
            )
        seen[w.cell] = w.name


def validate_schedule(schedule: ControlSchedule, wells: list[WellSpec]):
    by_name = {w.name: w for w in wells}
    for name in by_name:
        if name not in schedule.values:
            raise ValidationError(f"well {name} missing from schedule")
    for name, vals in schedule.values.items():
        if name not in by_name:
            raise ValidationError(f"schedule references unknown well {name}")
        if by_name[name].is_injector:
            if np.any(vals < 0):
                raise ValidationError(f"injector {name}: negative rate scheduled")
        elif np.any(vals <= 0):
            raise ValidationError(f"producer {name}: non-positive BHP scheduled")


@dataclass(frozen=True)
class State:
    """Per-cell oil pressure (psia) and water saturation at one time level.

    Oil saturation is always derived as ``1 - sw`` and never stored.  Arrays
    may be numpy (solver/metrics paths) or torch tensors (training path).
    """

    pressure: "np.ndarray"
    sw: "np.ndarray"

    @classmethod
    def create(cls, grid: GridSpec, pressure, sw, validate=True):
        p = _frozen_array(pressure, grid.shape)
        s = _frozen_array(sw, grid.shape)
        st = cls(pressure=p, sw=s)
        if validate:
            st.validate()
        return st

    def validate(self):
        p = _compat.to_numpy(self.pressure)
        s = _compat.to_numpy(self.sw)
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValidationError("pressure must be finite and positive")
        if np.any(s < -1e-9) or np.any(s > 1 + 1e-9):
            raise ValidationError("water saturation must lie in [0, 1]")

    @property
    def shape(self):
        return tuple(self.pressure.shape)

    @property
    def so(self):
        return 1.0 - self.sw

    def to_numpy(self) -> "State":
        return State(
            pressure=_compat.to_numpy(self.pressure), sw=_compat.to_numpy(self.sw)
        )


@dataclass(frozen=True)
class ReservoirCase:
    """Complete physical description consumed by the solver and the trainer."""

    grid: GridSpec
    rock: RockModel
    fluid: FluidModel
    relperm: CoreyRelPerm
    wells: tuple[WellSpec, ...]
    initial_state: State
    units: UnitConstants = field(default_factory=UnitConstants)
    harmonic_mode: str = "paper"  # "paper": K_i K_j/(K_i+K_j); "standard": x2

    def __post_init__(self):
        if self.harmonic_mode not in ("paper", "standard"):
            raise ValidationError("harmonic_mode must be 'paper' or 'standard'")
        validate_wells(list(self.wells), self.grid)
        if self.initial_state.shape != self.grid.shape:
            raise ValidationError("initial state does not match grid shape")

    @property
    def injectors(self) -> tuple[WellSpec, ...]:
        return tuple(w for w in self.wells if w.is_injector)

    @property
    def producers(self) -> tuple[WellSpec, ...]:
        return tuple(w for w in self.wells if not w.is_injector)

    def with_grid(self, grid: GridSpec, rock: RockModel, initial_state: State):
        return replace(self, grid=grid, rock=rock, initial_state=initial_state)
