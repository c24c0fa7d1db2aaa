import math

import numpy as np
import pytest

from vmac.closed_form import StateVector
from vmac.model import ConfigError, table_i_config
from vmac.oracle import (Simulator, classify_state, detect_event, integrate_segment,
                         run_periodic_steady_state)
from vmac.topology import state_matrices
from vmac.validation import self_check_deviations

CFG = table_i_config(c_out=1e3)


def test_lc_quarter_period():
    """State VIII is a plain L_ra-C_ra resonance from a zero capacitor voltage."""
    sysm = state_matrices(8, CFG)
    x0 = StateVector(0.0, 1.0, 0.0, 300.0, (0.0, 0.0), (0.0, 0.0, 0.0), 0.0)
    t = math.pi / 2 * math.sqrt(CFG.l_ra * CFG.c_ra)
    x = integrate_segment(sysm, x0, t)
    assert x.v_cra == pytest.approx(math.sqrt(CFG.l_ra / CFG.c_ra), rel=1e-9)
    assert x.i_lra == pytest.approx(0.0, abs=1e-9)


def test_integrate_rejects_negative_time():
    with pytest.raises(ValueError):
        integrate_segment(state_matrices(1, CFG), np.zeros(10), -1.0)


def test_detect_clamp_event():
    s5 = state_matrices(5, CFG)
    x5 = StateVector(5.0, 5.0, 0.0, 240.0, (240.0, 240.0), (240.0, 240.0, 240.0), 480.0)
    ev, x = detect_event(s5, x5, 1e-6, {"v_cra_clamp"})
    assert ev is not None and ev.kind == "v_cra_clamp" and ev.state == 6
    assert x.v_cra == pytest.approx(240.0, abs=1e-6)


def test_detect_nothing_before_horizon():
    s8 = state_matrices(8, CFG)
    x0 = StateVector(0.0, -1.0, 100.0, 300.0, (0.0, 0.0), (0.0, 0.0, 0.0), 0.0)
    ev, x = detect_event(s8, x0, 1e-9, {"v_cra_zero"})
    assert ev is None and 0 < x.v_cra < 100.0


def test_unknown_event_kind():
    with pytest.raises(ValueError):
        detect_event(state_matrices(8, CFG), np.zeros(10), 1e-6, {"bogus"})


def test_classify_states():
    assert classify_state({"Ma", "D1"}, 3) == 1
    assert classify_state({"Ma", "D2", "D4"}, 3) == 3
    assert classify_state({"Mca", "D3", "D5"}, 3) == 7
    assert classify_state(set(), 3) == 5
    assert classify_state({"Ma", "Mca"}, 3) == 0


def test_gate_schedule_room():
    with pytest.raises(ConfigError):
        Simulator(table_i_config(), t_off_a=9.5e-6)


def test_ideal_diodes_only():
    with pytest.raises(ConfigError):
        Simulator(table_i_config(diode_drop=0.7), t_off_a=5e-6)


def test_periodic_solution(simulated):
    dev = self_check_deviations(simulated)
    assert simulated.residual < 1e-9
    assert dev["power balance"] < 1e-3
    assert dev["energy conservation"] < 1e-12
    assert dev["diode complementarity"] < 1e-9
    assert dev["leg symmetry"] < 1e-9
    assert simulated.duty_ma == pytest.approx(0.5, abs=1e-6)
    assert all(simulated.zvs.values())


def test_mean_clamp_node_voltage(simulated):
    """Inductor volt-second balance puts the mean switch-node voltage at V_in."""
    for v in simulated.averages["v_cra"].values():
        assert v == pytest.approx(simulated.config.v_in, rel=1e-6)


def test_diode_averages_equal(simulated):
    avg = simulated.averages["device_current"]
    share = simulated.i_out / simulated.config.n_legs
    for (leg, name), value in avg.items():
        if name.startswith("D"):
            assert value == pytest.approx(share, rel=5e-3)
