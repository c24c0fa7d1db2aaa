import math

import pytest
from hypothesis import given, strategies as st

from vmac.metrics import (capacitor_ripples, device_stress, exact_output_ripples, gain_bound,
                          output_current, ripple_formulas, voltage_gain, zvs_margin)
from vmac.model import table_i_config


def test_gain_bound_value():
    assert gain_bound(3, 0.6) == pytest.approx(7.5)


def test_rated_output_needs_duty():
    """1 kV from 120 V needs M = 8.33, so D >= 0.64 with three stages."""
    d_min = 1 - 3 * 120.0 / 1000.0
    assert d_min == pytest.approx(0.64)
    assert gain_bound(3, d_min) == pytest.approx(1000 / 120)


@given(st.integers(2, 8), st.floats(0.01, 0.98), st.floats(0.0, 0.01))
def test_gain_bound_increasing(m, d, step):
    assert gain_bound(m, min(d + step, 0.99)) >= gain_bound(m, d)


def test_pump_ripple_value():
    cfg = table_i_config(r_load=769.2)
    dv_ca, _, _ = ripple_formulas(cfg, 1000.0 / 769.2, 0.0, 0.0)
    assert dv_ca[0] == pytest.approx(39.39, abs=0.01)
    assert dv_ca[1] == dv_ca[0] / 2


@given(st.floats(0.01, 10.0), st.floats(1e-7, 5e-6))
def test_ripple_formulas_nonnegative(i_out, d6):
    cfg = table_i_config()
    dv_ca, top, second = ripple_formulas(cfg, i_out, d6, 0.0)
    assert all(v > 0 for v in dv_ca)
    assert top >= 0 and second >= top


def test_output_current(solved):
    oc = output_current(solved)
    assert oc.i_out == pytest.approx(oc.i_out_load, rel=5e-3)
    assert oc.spread() < 5e-3
    assert len(oc.diode) == 2 * solved.config.m_stages - 1


def test_voltage_gain(solved):
    g = voltage_gain(solved)
    assert g.within_bound
    assert sum(g.v_cout_norm) == pytest.approx(1.0)
    assert g.m_gain == pytest.approx(solved.v_out / solved.config.v_in)


def test_ripples_match_waveforms(solved):
    rep = capacitor_ripples(solved)
    exact = exact_output_ripples(solved)
    assert all(v >= 0 for v in rep.dv_ca + rep.dv_cout)
    assert rep.dv_cout1 == pytest.approx(exact[0], rel=0.01)
    assert rep.dv_cout3 == pytest.approx(exact[2], rel=0.1)
    starts = solved.durations.starts()
    assert starts[0] <= rep.t_y <= starts[2] and starts[2] <= rep.t_z <= starts[3]
    assert rep.dv_ca2 == rep.dv_ca1 / 2


def test_zvs_passes_with_dead_time(solved):
    rep = zvs_margin(solved.config, solution=solved)
    assert rep.passed and rep.margin > 0
    assert rep.bound == pytest.approx(350e-9 / math.sqrt(5e-6 * 3.3e-9))


def test_zvs_fails_without_dead_time(solved):
    rep = zvs_margin(solved.config, dead_time=0.0, solution=solved)
    assert not rep.passed and rep.margin < 0


def test_zvs_unsolvable_point_fails(table_cfg):
    rep = zvs_margin(table_cfg.with_(r_load=1000.0), 0.99)
    assert not rep.passed and rep.diagnostic


def test_stress(solved):
    s = device_stress(solved)
    assert s.switch >= solved.v_cc_boundary
    assert s.c_out1_extra == solved.config.v_in
