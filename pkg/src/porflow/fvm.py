"""Finite-volume discretization of the two-phase mass balance.

This module is the single implementation of the per-timestep residual

    r = A(x_k) (x_k - x_{k-1}) / dt + T(x_k) x_k - Q(x_k, u_k)

used both by the Newton reference solver (driven to zero) and by the trainer
(minimized as the physics loss).  All state-dependent coefficients are
evaluated at x_k (fully implicit).  Internally everything runs on torch
tensors so the residual is differentiable with respect to the state fields;
numpy inputs are converted on the way in and back on the way out.

Sign conventions: Q > 0 means flow into the reservoir (producers contribute
negative Q); the flux term for cell i is -sum_j G_ij lambda_ij (P_j - P_i).
Residual units are surface volumes per day (STB/day).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from . import _compat
from .core import (
    ControlSchedule,
    CoreyRelPerm,
    FluidModel,
    GridSpec,
    Phase,
    ReservoirCase,
    RockModel,
    State,
    WellSpec,
    corey_relperm,
    fluid_props_at,
)
from .errors import CrossflowWarning, DimensionMismatch, InvalidWellGeometry
from .units import UnitConstants


def harmonic_perm(k_i, k_j, mode: str = "paper"):
    """Interface permeability K_i K_j / (K_i + K_j) (doubled in "standard" mode).

    The verbatim published formula omits the factor 2 of the usual
    half-distance two-point flux; both variants are exposed and the choice is
    carried by ``ReservoirCase.harmonic_mode``.
    """
    h = k_i * k_j / (k_i + k_j)
    return 2.0 * h if mode == "standard" else h


@dataclass(frozen=True)
class FaceTransmissibility:
    """Geometric face coefficients G = C * K_face * A / d.

    ``gx[j, i]`` couples cells (i, j) and (i+1, j); ``gy[j, i]`` couples
    (i, j) and (i, j+1).  No boundary faces exist: the no-flow Neumann
    condition is structural.
    """

    gx: np.ndarray  # (ny, nx-1)
    gy: np.ndarray  # (ny-1, nx)

    @property
    def n_faces(self) -> int:
        return self.gx.size + self.gy.size


def geometric_transmissibility(
    grid: GridSpec, rock: RockModel, units: UnitConstants, mode: str = "paper"
) -> FaceTransmissibility:
    """Geometric part of the face transmissibility on the 5-point stencil."""
    k = rock.perm
    kx = harmonic_perm(k[:, :-1], k[:, 1:], mode)
    ky = harmonic_perm(k[:-1, :], k[1:, :], mode)
    gx = units.darcy_const * kx * (grid.dy * grid.dz) / grid.dx
    gy = units.darcy_const * ky * (grid.dx * grid.dz) / grid.dy
    return FaceTransmissibility(gx=gx, gy=gy)


def upstream_relperm(p_i, p_j, kr_i, kr_j):
    """Upstream-weighted relative permeability: kr_i if p_i > p_j, else kr_j."""
    return _compat.where(p_i > p_j, kr_i, kr_j)


def well_index(
    grid: GridSpec, rock: RockModel, well: WellSpec, units: UnitConstants
) -> float:
    """Peaceman well index WI = 2 pi C K h / (ln(r_e/r_w) + s), in bbl/day/psi/(cp^-1)."""
    r_e = 0.14 * math.hypot(grid.dx, grid.dy)
    if r_e <= well.r_w:
        raise InvalidWellGeometry(
            f"well {well.name}: effective radius {r_e:.3g} <= wellbore radius {well.r_w:.3g}"
        )
    denom = math.log(r_e / well.r_w) + well.skin
    if denom <= 0:
        raise InvalidWellGeometry(f"well {well.name}: ln(r_e/r_w) + skin <= 0")
    k_cell = float(rock.perm[well.j, well.i])
    return 2.0 * math.pi * units.darcy_const * k_cell * grid.dz / denom


@dataclass(frozen=True)
class ResidualBundle:
    """Per-cell oil and water mass-balance residuals (STB/day)."""

    r_o: np.ndarray
    r_w: np.ndarray

    def to_numpy(self) -> "ResidualBundle":
        return ResidualBundle(_compat.to_numpy(self.r_o), _compat.to_numpy(self.r_w))

    def stack(self):
        """Flat [r_o; r_w] vector in linear cell order."""
        if _compat.is_tensor(self.r_o):
            return torch.cat([self.r_o.reshape(-1), self.r_w.reshape(-1)])
        return np.concatenate([self.r_o.ravel(), self.r_w.ravel()])


class ResidualAssembler:
    """Precomputed geometry for repeated residual evaluations on one case.

    Pure with respect to the state arguments: per-face and per-cell
    contributions are computed vectorized and reduced in a fixed order, so
    repeated evaluations are deterministic.
    """

    def __init__(self, case: ReservoirCase):
        self.case = case
        grid, rock, units = case.grid, case.rock, case.units
        faces = geometric_transmissibility(grid, rock, units, case.harmonic_mode)
        self.faces = faces
        self._gx = torch.from_numpy(np.array(faces.gx, dtype=np.float64))
        self._gy = torch.from_numpy(np.array(faces.gy, dtype=np.float64))
        # bulk volume per cell in bbl
        self.vb_bbl = units.ft3_to_bbl(grid.cell_volume)
        self._phi = torch.from_numpy(np.array(rock.porosity, dtype=np.float64))
        self.pore_volume_bbl = self.vb_bbl * rock.porosity  # (ny, nx)
        self.well_indices = {
            w.name: well_index(grid, rock, w, units) for w in case.wells
        }

    # -- pointwise property helpers (torch in, torch out) -------------------

    def _phase_b(self, p, phase: Phase):
        b, _ = fluid_props_at(p, phase, self.case.fluid)
        return b

    # -- spec operations -----------------------------------------------------

    def accumulation_coeffs(self, p, sw):
        """Diagonal accumulation coefficients A_op, A_os, A_wp, A_ws.

        Each multiplies a rate of change per day and yields STB/day.
        """
        fl = self.case.fluid
        c_r = self.case.rock.rock_compressibility
        b_o = self._phase_b(p, Phase.OIL)
        b_w = self._phase_b(p, Phase.WATER)
        vphi = self.vb_bbl * self._phi.to(p.dtype)
        so = 1.0 - sw
        a_op = vphi / b_o * so * (fl.oil.compressibility + c_r)
        a_os = -vphi / b_o
        a_wp = vphi / b_w * sw * (fl.water.compressibility + c_r)
        a_ws = vphi / b_w
        return a_op, a_os, a_wp, a_ws

    def well_source_terms(self, p, sw, controls_k: dict[str, float]):
        """Per-cell source vectors (Q_o, Q_w), positive into the reservoir."""
        fl = self.case.fluid
        q_o = torch.zeros_like(p)
        q_w = torch.zeros_like(p)
        for w in self.case.wells:
            u = controls_k[w.name]
            if w.is_injector:
                q_w[w.j, w.i] = q_w[w.j, w.i] + u
                continue
            p_cell = p[w.j, w.i]
            sw_cell = sw[w.j, w.i]
            p_val = float(p_cell.detach()) if _compat.is_tensor(p_cell) else float(p_cell)
            if p_val < u:
                warnings.warn(
                    f"producer {w.name}: well-block pressure below BHP (crossflow)",
                    CrossflowWarning,
                    stacklevel=2,
                )
            krw, kro = corey_relperm(sw_cell, self.case.relperm)
            wi = self.well_indices[w.name]
            drawdown = p_cell - u
            b_o = self._phase_b(p_cell, Phase.OIL)
            b_w = self._phase_b(p_cell, Phase.WATER)
            q_o[w.j, w.i] = q_o[w.j, w.i] - kro / (fl.oil.viscosity * b_o) * wi * drawdown
            q_w[w.j, w.i] = q_w[w.j, w.i] - krw / (fl.water.viscosity * b_w) * wi * drawdown
        return q_o, q_w

    def _flux(self, p, sw):
        """Flux terms (flux_o, flux_w): -sum over faces of G lambda dP, per cell."""
        fl = self.case.fluid
        krw, kro = corey_relperm(sw, self.case.relperm)
        b_o = self._phase_b(p, Phase.OIL)
        b_w = self._phase_b(p, Phase.WATER)

        flux_o = torch.zeros_like(p)
        flux_w = torch.zeros_like(p)
        gx = self._gx.to(p.dtype)
        gy = self._gy.to(p.dtype)

        for g, sl, sr in (
            (gx, (slice(None), slice(None, -1)), (slice(None), slice(1, None))),
            (gy, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
        ):
            p_l, p_r = p[sl], p[sr]
            dp = p_r - p_l
            kro_up = upstream_relperm(p_l, p_r, kro[sl], kro[sr])
            krw_up = upstream_relperm(p_l, p_r, krw[sl], krw[sr])
            # upstream kr, arithmetic-average B across the face
            b_o_f = 0.5 * (b_o[sl] + b_o[sr])
            b_w_f = 0.5 * (b_w[sl] + b_w[sr])
            t_o = g * kro_up / (fl.oil.viscosity * b_o_f) * dp
            t_w = g * krw_up / (fl.water.viscosity * b_w_f) * dp
            # flow t > 0 goes right-to-left cell: left gains (-t in residual
            # convention), right loses symmetrically
            flux_o[sl] = flux_o[sl] - t_o
            flux_o[sr] = flux_o[sr] + t_o
            flux_w[sl] = flux_w[sl] - t_w
            flux_w[sr] = flux_w[sr] + t_w
        return flux_o, flux_w

    def residual(self, p_k, sw_k, p_km1, sw_km1, controls_k, dt: float):
        """Oil/water residual fields for one implicit-Euler step (torch)."""
        a_op, a_os, a_wp, a_ws = self.accumulation_coeffs(p_k, sw_k)
        dp_dt = (p_k - p_km1) / dt
        dsw_dt = (sw_k - sw_km1) / dt
        flux_o, flux_w = self._flux(p_k, sw_k)
        q_o, q_w = self.well_source_terms(p_k, sw_k, controls_k)
        r_o = a_op * dp_dt + a_os * dsw_dt + flux_o - q_o
        r_w = a_wp * dp_dt + a_ws * dsw_dt + flux_w - q_w
        return r_o, r_w

    def residual_scale(self) -> np.ndarray:
        """Pore volume per day divisor making residuals saturation-rate-like."""
        return np.asarray(self.pore_volume_bbl, dtype=float)


def _as_torch(x):
    if _compat.is_tensor(x):
        return x
    return torch.from_numpy(np.array(x, dtype=np.float64))


def _check_state(state: State, grid: GridSpec):
    if tuple(state.pressure.shape) != grid.shape or tuple(state.sw.shape) != grid.shape:
        raise DimensionMismatch(
            f"state shape {tuple(state.pressure.shape)} != grid shape {grid.shape}"
        )


def accumulation_coeffs(state: State, case: ReservoirCase):
    """Spec-surface wrapper returning numpy coefficient arrays."""
    _check_state(state, case.grid)
    asm = ResidualAssembler(case)
    out = asm.accumulation_coeffs(_as_torch(state.pressure), _as_torch(state.sw))
    return tuple(_compat.to_numpy(a) for a in out)


def well_source_terms(state: State, case: ReservoirCase, controls_k: dict[str, float]):
    """Spec-surface wrapper returning numpy (Q_o, Q_w)."""
    _check_state(state, case.grid)
    asm = ResidualAssembler(case)
    q_o, q_w = asm.well_source_terms(
        _as_torch(state.pressure), _as_torch(state.sw), controls_k
    )
    return _compat.to_numpy(q_o), _compat.to_numpy(q_w)


def assemble_residual(
    state_k: State,
    state_km1: State,
    controls_k: dict[str, float],
    dt: float,
    case: ReservoirCase,
    assembler: ResidualAssembler | None = None,
) -> ResidualBundle:
    """Full per-timestep residual bundle.

    Accepts numpy- or torch-backed states; the result uses the same backend
    as ``state_k`` (torch inputs keep their autograd graph).
    """
    _check_state(state_k, case.grid)
    _check_state(state_km1, case.grid)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    asm = assembler if assembler is not None else ResidualAssembler(case)
    torch_in = _compat.is_tensor(state_k.pressure)
    r_o, r_w = asm.residual(
        _as_torch(state_k.pressure),
        _as_torch(state_k.sw),
        _as_torch(state_km1.pressure),
        _as_torch(state_km1.sw),
        controls_k,
        dt,
    )
    bundle = ResidualBundle(r_o=r_o, r_w=r_w)
    return bundle if torch_in else bundle.to_numpy()
