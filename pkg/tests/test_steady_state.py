import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmac.closed_form import ModelViolationError
from vmac.model import ConfigError, OperatingPoint
from vmac.steady_state import (NonConvergenceError, ideal_clamp_voltage, interval_durations,
                               solve_steady_state)
from vmac.validation import INVARIANT_TOLS, invariant_deviations


def test_ideal_clamp_voltage():
    assert ideal_clamp_voltage(120.0, 0.8) == pytest.approx(600.0)


def test_solution_closes(solved):
    assert solved.residual < 1e-9
    assert solved.closure_error < 1e-12
    assert solved.consistent
    assert solved.durations.total == pytest.approx(solved.config.t_s, rel=1e-12)
    assert all(d > 0 for d in solved.durations.d)


def test_invariants(solved):
    for key, dev in invariant_deviations(solved).items():
        assert dev < INVARIANT_TOLS[key], key


def test_waveform_periodic(solved):
    t_s = solved.config.t_s
    for t in np.linspace(0, t_s, 7)[1:-1]:
        a, b = solved.waveform(t), solved.waveform(t + t_s)
        np.testing.assert_allclose(a.as_array(), b.as_array())


def test_state_order(solved):
    starts = solved.durations.starts()
    states = [solved.state_at(0.5 * (a + b)) for a, b in zip(starts, starts[1:])]
    assert states == list(range(1, 9))


def test_clamp_voltage_near_ideal(solved):
    assert solved.v_cc == pytest.approx(solved.v_cc_ideal, rel=0.1)
    assert solved.v_cc_max >= solved.v_cc_boundary


def test_reproduces_from_propagation(solved):
    """A sequential pass from the solved boundary lands on the same period."""
    d = interval_durations(solved.config, solved.boundary, solved.v_cc_boundary,
                           solved.duty_ma)
    np.testing.assert_allclose(d.d, solved.durations.d, rtol=1e-6, atol=1e-12)


@settings(max_examples=5, deadline=None)
@given(st.floats(100.0, 400.0))
def test_scales_with_source(solved, v_in):
    ss = solve_steady_state(solved.config.with_(v_in=v_in), solved.duty_ma)
    assert ss.v_out == pytest.approx(solved.v_out * v_in / solved.config.v_in, rel=1e-8)
    np.testing.assert_allclose(ss.durations.d, solved.durations.d, rtol=1e-7)


def test_operating_point_argument(solved):
    op = OperatingPoint(0.75, 200.0, 1000.0)
    ss = solve_steady_state(solved.config, op)
    assert ss.config.v_in == 200.0
    assert ss.v_out == pytest.approx(solved.v_out * 200.0 / solved.config.v_in, rel=1e-8)


def test_seeded_continuation(solved):
    ss = solve_steady_state(solved.config.with_(r_load=1100.0), 0.77, seed=solved)
    assert ss.residual < 1e-9


def test_strict_reports_violations(table_cfg):
    """At 120 V / 769 Ohm and D = 0.655 the forced sequence reverses a diode."""
    cfg = table_cfg.with_(r_load=769.2)
    with pytest.raises(ModelViolationError):
        solve_steady_state(cfg, 0.655)
    ss = solve_steady_state(cfg, 0.655, strict=False)
    assert not ss.consistent and ss.violations


def test_infeasible_duty_fails_loudly(table_cfg):
    with pytest.raises(NonConvergenceError) as info:
        solve_steady_state(table_cfg.with_(r_load=1000.0), 0.99, use_oracle=False)
    assert "residual" in str(info.value)


def test_diode_drop_rejected(table_cfg):
    with pytest.raises(ConfigError):
        solve_steady_state(table_cfg.with_(diode_drop=0.7), 0.75)
