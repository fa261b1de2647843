"""Shared builders for the test suite.

Keeps the case wiring in one place so tests construct small reservoirs with
one call.  Fluid/relperm defaults mirror the bundled baseline configuration.
"""

from __future__ import annotations

import numpy as np

from porflow.core import (
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
)

# 20 m cells expressed in ft, matching the bundled cases.
DX_FT = 20.0 * 3.280839895013123

DEFAULT_RELPERM = CoreyRelPerm(
    s_wc=0.2, s_or=0.2, n_w=2.0, n_o=3.0, krw0=0.6, kro0=0.9
)


def default_fluids(p_ref: float = 3000.0) -> FluidModel:
    return FluidModel(
        oil=PhaseProps(
            viscosity=1.13, compressibility=1.0e-5, fvf_ref=1.0, pressure_ref=p_ref
        ),
        water=PhaseProps(
            viscosity=1.0, compressibility=3.0e-6, fvf_ref=1.0, pressure_ref=p_ref
        ),
    )


def injector(name, i, j, r_w=0.3, skin=0.0):
    return WellSpec(name, WellKind.RATE_CONTROLLED_INJECTOR, i, j, r_w, skin)


def producer(name, i, j, r_w=0.3, skin=0.0):
    return WellSpec(name, WellKind.BHP_CONTROLLED_PRODUCER, i, j, r_w, skin)


def build_case(
    nx,
    ny,
    perm=100.0,
    porosity=0.2,
    rock_compressibility=3.0e-6,
    wells=(),
    p_init=3000.0,
    sw_init=0.2,
    dx=DX_FT,
    harmonic_mode="paper",
    fluid=None,
    relperm=DEFAULT_RELPERM,
) -> ReservoirCase:
    grid = GridSpec(nx=nx, ny=ny, dx=dx, dy=dx, dz=dx)
    rock = RockModel.create(grid, perm, porosity, rock_compressibility)
    return ReservoirCase(
        grid=grid,
        rock=rock,
        fluid=fluid or default_fluids(p_init),
        relperm=relperm,
        wells=tuple(wells),
        initial_state=State.create(grid, p_init, sw_init),
        harmonic_mode=harmonic_mode,
    )


def two_well_case(nx=8, ny=8, **kwargs) -> ReservoirCase:
    """Small quarter-five-spot style case: one injector, one producer."""
    wells = (injector("I1", 1, 1), producer("P1", nx - 2, ny - 2))
    return build_case(nx, ny, wells=wells, **kwargs)


def constant_schedule(case, dt, n_steps, rate=1200.0, bhp=2400.0) -> ControlSchedule:
    values = {}
    for w in case.wells:
        values[w.name] = np.full(n_steps, rate if w.is_injector else bhp)
    return ControlSchedule.create(dt, n_steps, values)


def random_state(case, seed, p_lo=2500.0, p_hi=3200.0, sw_lo=0.2, sw_hi=0.7) -> State:
    rng = np.random.default_rng(seed)
    shape = case.grid.shape
    return State.create(
        case.grid,
        rng.uniform(p_lo, p_hi, shape),
        rng.uniform(sw_lo, sw_hi, shape),
    )


def heterogeneous_perm(nx, ny, seed, lo=20.0, hi=500.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, (ny, nx))
