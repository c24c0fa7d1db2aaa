import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmac.closed_form import (StateVector, clamp_node_voltage, inductor_charges,
                              inductor_currents, propagate, ramp_slopes, state_coefficients)
from vmac.model import table_i_config
from vmac.oracle import integrate_segment
from vmac.topology import state_matrices
from vmac.validation import matched_entry

CFG = table_i_config(c_out=1e3, c_p=1e-14)


@pytest.mark.parametrize("state", range(1, 9))
def test_matches_matrix_exponential(state):
    e = matched_entry(state, CFG)
    co = state_coefficients(state, CFG, e)
    sysm = state_matrices(state, CFG)
    for tau in np.linspace(0, 400e-9, 41):
        ref = integrate_segment(sysm, e, tau)
        ia, ir = inductor_currents(state, co, e, tau)
        scale = max(abs(e.i_la), abs(e.i_lra))
        assert abs(ia - ref.i_la) < 1e-7 * scale
        assert abs(ir - ref.i_lra) < 1e-7 * scale
        assert abs(clamp_node_voltage(state, co, e, tau) - ref.v_cra) < 1e-7 * e.v_cc


@pytest.mark.parametrize("state", [1, 4])
def test_straight_line_states(state):
    e = matched_entry(state, CFG)
    co = state_coefficients(state, CFG, e)
    s_la, s_lra = ramp_slopes(state, CFG, e)
    tau = 1e-6
    ia, ir = inductor_currents(state, co, e, tau)
    assert ia == pytest.approx(e.i_la + s_la * tau, rel=1e-9)
    assert ir == pytest.approx(e.i_lra + s_lra * tau, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(1e-9, 2e-6))
def test_charge_is_integral_of_current(state, tau):
    e = matched_entry(state, CFG)
    co = state_coefficients(state, CFG, e)
    h = tau * 1e-4
    qa1, qr1 = inductor_charges(co, tau + h)
    qa0, qr0 = inductor_charges(co, tau - h)
    ia, ir = inductor_currents(state, co, e, tau)
    scale = max(abs(e.i_la), abs(e.i_lra), 1.0)
    assert (qa1 - qa0) / (2 * h) == pytest.approx(ia, abs=1e-5 * scale)
    assert (qr1 - qr0) / (2 * h) == pytest.approx(ir, abs=1e-5 * scale)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(0.5, 2.0), st.floats(1e-8, 5e-7), st.floats(1e-8, 5e-7))
def test_propagation_composes(state, k, t1, t2):
    """Propagating t1 then t2 equals propagating t1 + t2 (no load)."""
    e = matched_entry(state, CFG.with_(v_in=120.0 * k))
    cfg = CFG.with_(v_in=120.0 * k)
    a = propagate(state, cfg, propagate(state, cfg, e, t1, load=False), t2, load=False)
    b = propagate(state, cfg, e, t1 + t2, load=False)
    np.testing.assert_allclose(a.as_array()[:3], b.as_array()[:3], rtol=1e-7, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(0.1, 10.0))
def test_linear_in_source(state, k):
    """Scaling V_in and every entry value scales the solution."""
    e = matched_entry(state, CFG)
    ek = StateVector.from_array(e.as_array() * k, 3)
    cfg_k = CFG.with_(v_in=CFG.v_in * k)
    tau = 300e-9
    x = np.array(inductor_currents(state, state_coefficients(state, CFG, e), e, tau))
    xk = np.array(inductor_currents(state, state_coefficients(state, cfg_k, ek), ek, tau))
    np.testing.assert_allclose(xk, k * x, rtol=1e-8, atol=1e-9 * k)


def test_negative_time_rejected():
    e = matched_entry(1, CFG)
    co = state_coefficients(1, CFG, e)
    with pytest.raises(ValueError):
        inductor_currents(1, co, e, -1e-9)
