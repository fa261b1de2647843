"""Unit tests for configuration loading, generation and round-tripping."""

from importlib import resources

import numpy as np
import pytest
import yaml

from porflow.config import (
    ControlSuite,
    build_config,
    gen_control_suite,
    load_config,
    lognormal_perm_field,
    suite_from_config,
)
from porflow.errors import ParseError, ValidationError

BUNDLED = resources.files("porflow") / "cases"


def minimal_raw(**overrides):
    raw = {
        "name": "mini",
        "grid": {"nx": 4, "ny": 3, "dx": 50.0, "dy": 50.0, "dz": 20.0},
        "rock": {"permeability": 100.0},
        "initial": {"pressure": 3000.0, "sw": 0.2},
        "wells": [
            {"name": "I1", "type": "injector", "i": 0, "j": 0},
            {"name": "P1", "type": "producer", "i": 3, "j": 2},
        ],
        "schedule": {
            "dt": 2.0,
            "n_steps": 4,
            "values": {
                "I1": [1000.0, 1000.0, 1200.0, 1200.0],
                "P1": [2400.0, 2400.0, 2350.0, 2350.0],
            },
        },
    }
    raw.update(overrides)
    return raw


class TestBundledCases:
    def test_baseline_64_shape(self):
        cfg = load_config(BUNDLED / "baseline_64.case")
        assert cfg.case.grid.nx == 64 and cfg.case.grid.ny == 64
        assert len(cfg.case.injectors) == 3
        assert len(cfg.case.producers) == 2
        assert cfg.schedule.dt == 2.0
        assert cfg.schedule.n_steps == 50

    def test_metric_cells_converted_to_ft(self):
        cfg = load_config(BUNDLED / "baseline_64.case")
        assert cfg.case.grid.dx == pytest.approx(20.0 * 3.280839895013123, rel=1e-15)

    def test_desk_16_shape(self):
        cfg = load_config(BUNDLED / "desk_16.case")
        assert cfg.case.grid.nx == 16
        assert cfg.schedule.n_steps == 10
        assert cfg.trainer.sigma == 0.05


class TestDefaultsAndValidation:
    def test_water_viscosity_default_reported(self):
        raw = minimal_raw()
        cfg = build_config(raw)
        assert cfg.case.fluid.water.viscosity == 1.0
        assert cfg.resolved["fluids"]["water"]["viscosity"] == 1.0

    def test_well_outside_grid_named(self):
        raw = minimal_raw()
        raw["wells"][1]["i"] = 99
        with pytest.raises(ValidationError, match="P1"):
            build_config(raw)

    def test_missing_required_field(self):
        raw = minimal_raw()
        del raw["initial"]
        with pytest.raises(ValidationError, match="initial"):
            build_config(raw)

    def test_unknown_well_type(self):
        raw = minimal_raw()
        raw["wells"][0]["type"] = "monitor"
        with pytest.raises(ValidationError):
            build_config(raw)

    def test_parse_error_reports_location(self, tmp_path):
        bad = tmp_path / "bad.case"
        bad.write_text("grid:\n  nx: 4\n bad_indent: {\n")
        with pytest.raises(ParseError, match="line"):
            load_config(bad)

    def test_top_level_must_be_mapping(self, tmp_path):
        f = tmp_path / "list.case"
        f.write_text("- a\n- b\n")
        with pytest.raises(ParseError):
            load_config(f)


class TestResolvedRoundTrip:
    def test_dump_is_loadable_and_equivalent(self):
        cfg = load_config(BUNDLED / "desk_16.case")
        raw2 = yaml.safe_load(cfg.resolved_dump())
        cfg2 = build_config(raw2)
        assert np.array_equal(cfg2.case.rock.perm, cfg.case.rock.perm)
        assert cfg2.case.grid == cfg.case.grid
        assert cfg2.trainer == cfg.trainer
        assert cfg2.solver == cfg.solver
        assert cfg2.net_spec == cfg.net_spec
        for name in cfg.schedule.values:
            assert np.array_equal(cfg2.schedule.values[name], cfg.schedule.values[name])

    def test_explicit_values_round_trip(self):
        cfg = build_config(minimal_raw())
        cfg2 = build_config(yaml.safe_load(cfg.resolved_dump()))
        for name in cfg.schedule.values:
            assert np.array_equal(cfg2.schedule.values[name], cfg.schedule.values[name])


class TestPermField:
    def test_seeded_and_positive(self):
        f1 = lognormal_perm_field(16, 16, 100.0, 1.0, 3.0, seed=7)
        f2 = lognormal_perm_field(16, 16, 100.0, 1.0, 3.0, seed=7)
        assert np.array_equal(f1, f2)
        assert np.all(f1 > 0)
        assert f1.shape == (16, 16)

    def test_geometric_mean_parametrization(self):
        f = lognormal_perm_field(64, 64, 100.0, 0.5, 0.0, seed=3)
        assert np.exp(np.mean(np.log(f))) == pytest.approx(100.0, rel=1e-10)

    def test_log_std(self):
        f = lognormal_perm_field(64, 64, 100.0, 0.7, 2.0, seed=4)
        assert np.std(np.log(f)) == pytest.approx(0.7, rel=1e-10)


class TestControlSuite:
    def _suite(self, period, n_steps=50, dt=2.0, n_schedules=3, seed=5):
        return ControlSuite(
            n_schedules=n_schedules,
            dt=dt,
            n_steps=n_steps,
            period_days=period,
            rate_range=(1000.0, 1500.0),
            bhp_range=(2300.0, 2500.0),
            seed=seed,
            injector_names=("I1",),
            producer_names=("P1",),
        )

    def test_period_equals_total_time_is_constant(self):
        scheds = gen_control_suite(self._suite(period=100.0))
        for s in scheds:
            for vals in s.values.values():
                assert np.ptp(vals) == 0.0

    def test_two_segments_of_25(self):
        scheds = gen_control_suite(self._suite(period=50.0))
        vals = scheds[0].values["I1"]
        assert np.ptp(vals[:25]) == 0.0
        assert np.ptp(vals[25:]) == 0.0
        assert vals[0] != vals[25]

    def test_same_seed_identical(self):
        a = gen_control_suite(self._suite(period=10.0))
        b = gen_control_suite(self._suite(period=10.0))
        for s1, s2 in zip(a, b):
            for name in s1.values:
                assert np.array_equal(s1.values[name], s2.values[name])

    def test_values_within_ranges(self):
        for s in gen_control_suite(self._suite(period=10.0)):
            assert np.all(s.values["I1"] >= 1000.0) and np.all(s.values["I1"] <= 1500.0)
            assert np.all(s.values["P1"] >= 2300.0) and np.all(s.values["P1"] <= 2500.0)

    def test_period_not_multiple_of_dt(self):
        with pytest.raises(ValidationError):
            self._suite(period=5.0, dt=2.0)

    def test_suite_from_config_uses_sweep_section(self):
        cfg = load_config(BUNDLED / "desk_16.case")
        suite = suite_from_config(cfg, period_days=10.0)
        assert suite.period_days == 10.0
        assert suite.n_schedules == 10
        assert suite.seed == 99
        assert suite.injector_names == ("I1",)
        assert set(suite.producer_names) == {"P1", "P2"}
