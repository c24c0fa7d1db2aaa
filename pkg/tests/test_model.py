import math

import pytest
from hypothesis import given, strategies as st

from vmac.model import ConfigError, OperatingPoint, normalize, table_i_config


def test_table_values(table_cfg):
    assert table_cfg.m_stages == 3 and table_cfg.n_legs == 2
    assert table_cfg.t_s == pytest.approx(10e-6)
    assert table_cfg.c_c == pytest.approx(200e-9)


def test_normalized_base(table_cfg):
    p = normalize(table_cfg)
    assert p.omega_r == pytest.approx(1 / math.sqrt(5e-6 * 3.3e-9))
    assert p.z_r == pytest.approx(math.sqrt(5e-6 / 3.3e-9))
    assert p.lambda_l == pytest.approx(0.1)
    assert math.isnan(p.m_cc)
    assert normalize(table_cfg, v_cc=600.0).m_cc == pytest.approx(5.0)


@pytest.mark.parametrize("bad", [dict(m_stages=1), dict(n_legs=0), dict(l_a=-1.0),
                                 dict(c_ra=1e-6), dict(f_s=float("nan")), dict(diode_drop=-0.1)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        table_i_config(**bad)


@pytest.mark.parametrize("duty", [0.0, 1.0, -0.2, 1.5])
def test_operating_point_duty_range(duty):
    with pytest.raises(ConfigError):
        OperatingPoint(duty, 120.0, 769.0)


@given(st.floats(0.01, 0.99), st.floats(1.0, 1e3), st.floats(1.0, 1e5))
def test_operating_point_applies(duty, v_in, r_load):
    op = OperatingPoint(duty, v_in, r_load)
    cfg = op.apply(table_i_config())
    assert cfg.v_in == v_in and cfg.r_load == r_load
    assert op.phase_shift == pytest.approx(math.pi)
