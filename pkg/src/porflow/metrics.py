"""Accuracy and performance diagnostics against the Newton reference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ReservoirCase, State
from .errors import DegenerateReference, DimensionMismatch, DivisionByZeroPixel
from .fvm import well_source_terms
from .newton import Trajectory


def mape(y, y_hat) -> float:
    """Mean absolute error normalized by the maximum absolute reference value.

    ``y`` is the reference field; the denominator is max|y_i| over the field,
    so this is a normalized MAE rather than a pointwise percentage error.
    """
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise DimensionMismatch(f"field lengths differ: {y.size} vs {y_hat.size}")
    denom = np.max(np.abs(y))
    if denom == 0:
        raise DegenerateReference("reference field is identically zero")
    return float(np.mean(np.abs(y - y_hat)) / denom)


def relative_error_map(x_pred, x_ref) -> np.ndarray:
    """Pixelwise signed relative error (x_pred - x_ref) / x_ref."""
    x_pred = np.asarray(x_pred, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x_pred.shape != x_ref.shape:
        raise DimensionMismatch(
            f"shapes differ: {x_pred.shape} vs {x_ref.shape}"
        )
    zero = x_ref == 0
    if np.any(zero):
        pixel = tuple(int(v) for v in np.argwhere(zero)[0])
        raise DivisionByZeroPixel(
            f"reference is zero at pixel {pixel}", pixel=pixel
        )
    return (x_pred - x_ref) / x_ref


@dataclass(frozen=True)
class WellQuantities:
    """Producer observables at one time level (rates as positive magnitudes)."""

    name: str
    wbp: float
    oil_rate: float
    water_rate: float


def extract_well_quantities(
    state: State, case: ReservoirCase, controls_k: dict[str, float]
) -> list[WellQuantities]:
    """Per-producer WBP and phase rates, via the same source terms the
    residual uses (single implementation, one call path)."""
    q_o, q_w = well_source_terms(state, case, controls_k)
    out = []
    pressure = np.asarray(state.pressure)
    for w in case.producers:
        out.append(
            WellQuantities(
                name=w.name,
                wbp=float(pressure[w.j, w.i]),
                oil_rate=float(-q_o[w.j, w.i]),
                water_rate=float(-q_w[w.j, w.i]),
            )
        )
    return out


@dataclass
class ErrorReport:
    """Per-step scalar errors plus per-producer observables for two trajectories."""

    times: np.ndarray
    mape_pressure: np.ndarray
    mape_saturation: np.ndarray
    well_rows: list[dict] = field(default_factory=list)

    @property
    def mean_mape_pressure(self) -> float:
        return float(np.mean(self.mape_pressure))

    @property
    def mean_mape_saturation(self) -> float:
        return float(np.mean(self.mape_saturation))


def compare_trajectories(
    reference: Trajectory,
    predicted: Trajectory,
    case: ReservoirCase,
    schedule=None,
) -> ErrorReport:
    """MAPE curves (and well observables when a schedule is given)."""
    if len(reference.states) != len(predicted.states):
        raise DimensionMismatch("trajectories have different lengths")
    n = len(reference.states) - 1
    mp, ms, rows = [], [], []
    for k in range(1, n + 1):
        ref, pred = reference.states[k], predicted.states[k]
        mp.append(mape(ref.pressure, pred.pressure))
        ms.append(mape(ref.sw, pred.sw))
        if schedule is not None:
            controls_k = schedule.at(k)
            for wq_ref, wq_pred in zip(
                extract_well_quantities(ref, case, controls_k),
                extract_well_quantities(pred, case, controls_k),
            ):
                rows.append(
                    {
                        "step": k,
                        "well": wq_ref.name,
                        "wbp_ref": wq_ref.wbp,
                        "wbp_pred": wq_pred.wbp,
                        "oil_rate_ref": wq_ref.oil_rate,
                        "oil_rate_pred": wq_pred.oil_rate,
                        "water_rate_ref": wq_ref.water_rate,
                        "water_rate_pred": wq_pred.water_rate,
                    }
                )
    times = np.arange(1, n + 1) * reference.dt
    return ErrorReport(
        times=times,
        mape_pressure=np.array(mp),
        mape_saturation=np.array(ms),
        well_rows=rows,
    )


def water_in_place(state: State, case: ReservoirCase) -> float:
    """Surface-volume water inventory (STB), consistent with the residual's
    linearized accumulation model."""
    from .core import Phase, fluid_props_at

    p = np.asarray(state.pressure)
    sw = np.asarray(state.sw)
    b_w, _ = fluid_props_at(p, Phase.WATER, case.fluid)
    c_r = case.rock.rock_compressibility
    p_ref = case.fluid.water.pressure_ref
    vb = case.units.ft3_to_bbl(case.grid.cell_volume)
    phi_eff = case.rock.porosity * (1.0 + c_r * (p - p_ref))
    return float(np.sum(vb * phi_eff * sw / b_w))


def mass_balance_audit(
    trajectory: Trajectory, case: ReservoirCase, schedule
) -> dict[str, float]:
    """Cumulative injected minus produced water vs the change in water in place."""
    injected = 0.0
    produced = 0.0
    for k in range(1, schedule.n_steps + 1):
        controls_k = schedule.at(k)
        state_k = trajectory.states[k]
        _, q_w = well_source_terms(state_k, case, controls_k)
        net = float(np.sum(q_w)) * schedule.dt
        pos = sum(controls_k[w.name] for w in case.injectors) * schedule.dt
        injected += pos
        produced += pos - net
    dwip = water_in_place(trajectory.states[-1], case) - water_in_place(
        trajectory.states[0], case
    )
    net_in = injected - produced
    return {
        "injected_stb": injected,
        "produced_stb": produced,
        "delta_wip_stb": dwip,
        "imbalance_stb": net_in - dwip,
        "relative_imbalance": (net_in - dwip) / max(abs(injected), 1.0),
    }


@dataclass(frozen=True)
class BenchRow:
    label: str
    n_cells: int
    dofs: int
    parameter_count: int
    newton_step_seconds: float
    inference_step_seconds: float

    @property
    def speedup(self) -> float:
        return self.newton_step_seconds / self.inference_step_seconds


def speedup_report(rows: list[BenchRow]) -> list[dict]:
    """Observational table of DoFs, parameter counts, timings and speedups."""
    return [
        {
            "case": r.label,
            "n_cells": r.n_cells,
            "dofs": r.dofs,
            "parameters": r.parameter_count,
            "newton_step_s": r.newton_step_seconds,
            "inference_step_s": r.inference_step_seconds,
            "speedup": r.speedup,
        }
        for r in rows
    ]
