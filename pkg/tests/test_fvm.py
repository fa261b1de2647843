"""Unit tests for the finite-volume residual engine."""

import math

import numpy as np
import pytest
import torch

from porflow.core import State
from porflow.errors import CrossflowWarning, DimensionMismatch, InvalidWellGeometry
from porflow.fvm import (
    ResidualAssembler,
    assemble_residual,
    accumulation_coeffs,
    geometric_transmissibility,
    harmonic_perm,
    upstream_relperm,
    well_index,
    well_source_terms,
)
from porflow.units import FIELD_DARCY_CONST, UnitConstants

from helpers import (
    build_case,
    constant_schedule,
    heterogeneous_perm,
    injector,
    producer,
    random_state,
    two_well_case,
)
from oracle import naive_residual, naive_well_index


class TestHarmonicPerm:
    def test_equal_values(self):
        assert harmonic_perm(100.0, 100.0) == 50.0

    def test_symmetry(self):
        assert harmonic_perm(37.0, 411.0) == harmonic_perm(411.0, 37.0)

    def test_large_contrast_limit(self):
        assert harmonic_perm(100.0, 1e12) == pytest.approx(100.0, rel=1e-8)

    def test_bounded_by_min(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(1, 1000, 50), rng.uniform(1, 1000, 50)
        assert np.all(harmonic_perm(a, b) <= np.minimum(a, b))

    def test_standard_mode_doubles(self):
        assert harmonic_perm(100.0, 100.0, mode="standard") == 100.0


class TestGeometricTransmissibility:
    def test_homogeneous_uniform_grid(self):
        case = build_case(5, 4, perm=100.0, dx=50.0)
        faces = geometric_transmissibility(case.grid, case.rock, case.units)
        assert faces.gx.shape == (4, 4)
        assert faces.gy.shape == (3, 5)
        assert np.ptp(faces.gx) == 0.0
        assert np.ptp(faces.gy) == 0.0
        assert faces.n_faces == (5 - 1) * 4 + 5 * (4 - 1)

    def test_doubling_dz_doubles_g(self):
        case1 = build_case(4, 4, dx=50.0)
        f1 = geometric_transmissibility(case1.grid, case1.rock, case1.units)
        from porflow.core import GridSpec, RockModel

        grid2 = GridSpec(nx=4, ny=4, dx=50.0, dy=50.0, dz=100.0)
        rock2 = RockModel.create(grid2, 100.0, 0.2, 3e-6)
        f2 = geometric_transmissibility(grid2, rock2, case1.units)
        assert np.allclose(f2.gx, 2.0 * f1.gx)
        assert np.allclose(f2.gy, 2.0 * f1.gy)

    def test_hand_value_cubic_cells(self):
        # K_i = 100, K_j = 400, dx = dy = dz = L: harmonic perm 80, A/d = L.
        L = 33.0
        case = build_case(2, 1, perm=[[100.0, 400.0]], dx=L)
        faces = geometric_transmissibility(case.grid, case.rock, case.units)
        assert faces.gx[0, 0] == pytest.approx(FIELD_DARCY_CONST * 80.0 * L, rel=1e-14)

    def test_nonnegative(self):
        case = build_case(6, 5, perm=heterogeneous_perm(6, 5, seed=1))
        faces = geometric_transmissibility(case.grid, case.rock, case.units)
        assert np.all(faces.gx >= 0) and np.all(faces.gy >= 0)


class TestUpstreamRelperm:
    def test_left_upstream(self):
        assert upstream_relperm(10.0, 5.0, 0.7, 0.1) == 0.7

    def test_right_upstream(self):
        assert upstream_relperm(5.0, 10.0, 0.7, 0.1) == 0.1

    def test_tie_uses_second(self):
        assert upstream_relperm(5.0, 5.0, 0.7, 0.1) == 0.1

    def test_sign_reversal_swaps_choice_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p1, p2 = rng.uniform(2000, 4000, 2)
            k1, k2 = rng.uniform(0, 1, 2)
            fwd = upstream_relperm(p1, p2, k1, k2)
            rev = upstream_relperm(p2, p1, k2, k1)
            if p1 != p2:
                assert fwd == rev


class TestWellIndex:
    def test_effective_radius_hand_value(self):
        case = build_case(4, 4, dx=65.6)
        r_e = 0.14 * math.hypot(65.6, 65.6)
        assert r_e == pytest.approx(12.99, abs=0.01)
        w = injector("I1", 1, 1)
        wi = well_index(case.grid, case.rock, w, case.units)
        expected = 2 * math.pi * FIELD_DARCY_CONST * 100.0 * 65.6 / math.log(r_e / 0.3)
        assert wi == pytest.approx(expected, rel=1e-14)

    def test_skin_decreases_wi(self):
        case = build_case(4, 4)
        wis = [
            well_index(case.grid, case.rock, injector("I", 1, 1, skin=s), case.units)
            for s in (0.0, 1.0, 5.0)
        ]
        assert wis[0] > wis[1] > wis[2]

    def test_linear_in_cell_perm(self):
        case1 = build_case(4, 4, perm=100.0)
        case2 = build_case(4, 4, perm=200.0)
        w = injector("I", 1, 1)
        wi1 = well_index(case1.grid, case1.rock, w, case1.units)
        wi2 = well_index(case2.grid, case2.rock, w, case2.units)
        assert wi2 == pytest.approx(2.0 * wi1, rel=1e-14)

    def test_wellbore_radius_exceeding_effective_radius(self):
        case = build_case(4, 4, dx=2.0)  # r_e = 0.14*hypot(2,2) = 0.396
        with pytest.raises(InvalidWellGeometry):
            well_index(case.grid, case.rock, injector("I", 1, 1, r_w=0.5), case.units)

    def test_negative_skin_cancelling_log(self):
        case = build_case(4, 4)
        r_e = 0.14 * math.hypot(case.grid.dx, case.grid.dy)
        bad_skin = -math.log(r_e / 0.3) - 0.1
        with pytest.raises(InvalidWellGeometry):
            well_index(
                case.grid, case.rock, injector("I", 1, 1, skin=bad_skin), case.units
            )


class TestWellSourceTerms:
    def test_balanced_producers_zero_source(self):
        case = build_case(
            5, 5, wells=(producer("P1", 1, 1), producer("P2", 3, 3))
        )
        q_o, q_w = well_source_terms(
            case.initial_state, case, {"P1": 3000.0, "P2": 3000.0}
        )
        assert np.all(q_o == 0.0) and np.all(q_w == 0.0)

    def test_single_injector_placement(self):
        case = build_case(5, 5, wells=(injector("I1", 2, 3),))
        q_o, q_w = well_source_terms(case.initial_state, case, {"I1": 1000.0})
        assert np.all(q_o == 0.0)
        assert q_w[3, 2] == 1000.0
        assert np.count_nonzero(q_w) == 1

    def test_producer_at_connate_water(self):
        case = build_case(5, 5, wells=(producer("P1", 2, 2),), sw_init=0.2)
        q_o, q_w = well_source_terms(case.initial_state, case, {"P1": 2500.0})
        assert q_w[2, 2] == 0.0  # krw = 0 at s_wc
        assert q_o[2, 2] < 0.0  # production is negative source

    def test_crossflow_warns_but_evaluates(self):
        case = build_case(5, 5, wells=(producer("P1", 2, 2),), p_init=2400.0)
        with pytest.warns(CrossflowWarning):
            q_o, q_w = well_source_terms(case.initial_state, case, {"P1": 2500.0})
        assert q_o[2, 2] > 0.0  # Eq. evaluated as written, not clipped


class TestAccumulationCoeffs:
    def test_full_water_kills_oil_pressure_term(self):
        case = build_case(3, 3, sw_init=1.0)
        a_op, _, _, _ = accumulation_coeffs(case.initial_state, case)
        assert np.all(a_op == 0.0)

    def test_incompressible_limit(self):
        from porflow.core import FluidModel, PhaseProps

        fl = FluidModel(
            oil=PhaseProps(viscosity=1.13, compressibility=0.0),
            water=PhaseProps(viscosity=1.0, compressibility=0.0),
        )
        case = build_case(3, 3, fluid=fl, rock_compressibility=0.0)
        a_op, a_os, a_wp, a_ws = accumulation_coeffs(case.initial_state, case)
        assert np.all(a_op == 0.0) and np.all(a_wp == 0.0)
        assert np.all(a_os < 0.0) and np.all(a_ws > 0.0)

    def test_linear_in_cell_volume(self):
        case1 = build_case(3, 3, dx=50.0)
        from porflow.core import GridSpec, ReservoirCase, RockModel, State
        import dataclasses

        grid2 = GridSpec(nx=3, ny=3, dx=50.0, dy=50.0, dz=100.0)
        rock2 = RockModel.create(grid2, 100.0, 0.2, 3e-6)
        case2 = case1.with_grid(grid2, rock2, State.create(grid2, 3000.0, 0.2))
        c1 = accumulation_coeffs(case1.initial_state, case1)
        c2 = accumulation_coeffs(case2.initial_state, case2)
        for a1, a2 in zip(c1, c2):
            assert np.allclose(a2, 2.0 * a1, rtol=1e-14)


class TestAssembleResidual:
    def test_closed_single_cell_steady_state(self):
        case = build_case(1, 1)
        bundle = assemble_residual(
            case.initial_state, case.initial_state, {}, 2.0, case
        )
        assert np.all(bundle.r_o == 0.0)
        assert np.all(bundle.r_w == 0.0)

    def test_two_cell_flux_antisymmetry(self):
        case = build_case(2, 1)
        state = State.create(case.grid, [[3100.0, 2900.0]], 0.4)
        bundle = assemble_residual(state, state, {}, 1e12, case)
        # with dt huge and no wells, the residual is pure flux exchange
        assert bundle.r_o[0, 0] == pytest.approx(-bundle.r_o[0, 1], rel=1e-12)
        assert bundle.r_w[0, 0] == pytest.approx(-bundle.r_w[0, 1], rel=1e-12)
        assert bundle.r_o[0, 0] != 0.0

    def test_flux_contributions_cancel_pairwise(self):
        case = build_case(6, 5, perm=heterogeneous_perm(6, 5, seed=2))
        state_k = random_state(case, seed=3)
        asm = ResidualAssembler(case)
        flux_o, flux_w = asm._flux(
            torch.from_numpy(np.array(state_k.pressure)),
            torch.from_numpy(np.array(state_k.sw)),
        )
        scale = max(float(flux_o.abs().max()), float(flux_w.abs().max()))
        assert abs(float(flux_o.sum())) < 1e-10 * scale
        assert abs(float(flux_w.sum())) < 1e-10 * scale

    def test_matches_naive_oracle_heterogeneous(self):
        case = two_well_case(5, 4, perm=heterogeneous_perm(5, 4, seed=4))
        state_k = random_state(case, seed=5)
        state_km1 = random_state(case, seed=6)
        controls = {"I1": 1100.0, "P1": 2450.0}
        bundle = assemble_residual(state_k, state_km1, controls, 2.0, case)
        r_o, r_w = naive_residual(
            case, state_k.pressure, state_k.sw,
            state_km1.pressure, state_km1.sw, controls, 2.0,
        )
        assert np.allclose(bundle.r_o, r_o, rtol=1e-12, atol=1e-12)
        assert np.allclose(bundle.r_w, r_w, rtol=1e-12, atol=1e-12)

    def test_standard_harmonic_mode_matches_oracle(self):
        case = two_well_case(
            4, 4, perm=heterogeneous_perm(4, 4, seed=8), harmonic_mode="standard"
        )
        state_k = random_state(case, seed=9)
        controls = {"I1": 900.0, "P1": 2350.0}
        bundle = assemble_residual(state_k, case.initial_state, controls, 2.0, case)
        r_o, r_w = naive_residual(
            case, state_k.pressure, state_k.sw,
            case.initial_state.pressure, case.initial_state.sw, controls, 2.0,
        )
        assert np.allclose(bundle.r_o, r_o, rtol=1e-12, atol=1e-12)
        assert np.allclose(bundle.r_w, r_w, rtol=1e-12, atol=1e-12)

    def test_well_index_matches_naive(self):
        case = two_well_case(6, 6, perm=heterogeneous_perm(6, 6, seed=10))
        asm = ResidualAssembler(case)
        for w in case.wells:
            assert asm.well_indices[w.name] == pytest.approx(
                naive_well_index(case, w), rel=1e-14
            )

    def test_converged_newton_state_has_small_residual(self):
        from porflow.newton import NewtonConfig, newton_solve_timestep

        case = two_well_case(5, 5)
        controls = {"I1": 1200.0, "P1": 2400.0}
        state, _ = newton_solve_timestep(
            case.initial_state, controls, 2.0, case, NewtonConfig()
        )
        bundle = assemble_residual(state, case.initial_state, controls, 2.0, case)
        scale = ResidualAssembler(case).residual_scale() / 2.0
        assert np.max(np.abs(bundle.r_o) / scale) < 1e-6
        assert np.max(np.abs(bundle.r_w) / scale) < 1e-6

    def test_torch_input_returns_torch_with_grad(self):
        case = two_well_case(4, 4)
        p = torch.full((4, 4), 3000.0, dtype=torch.float64, requires_grad=True)
        sw = torch.full((4, 4), 0.4, dtype=torch.float64, requires_grad=True)
        state_k = State(pressure=p, sw=sw)
        bundle = assemble_residual(
            state_k, case.initial_state, {"I1": 1000.0, "P1": 2400.0}, 2.0, case
        )
        assert isinstance(bundle.r_o, torch.Tensor)
        assert bundle.r_o.requires_grad

    def test_dimension_mismatch(self):
        case = two_well_case(4, 4)
        other = build_case(3, 3)
        with pytest.raises(DimensionMismatch):
            assemble_residual(
                other.initial_state, case.initial_state,
                {"I1": 1000.0, "P1": 2400.0}, 2.0, case,
            )
