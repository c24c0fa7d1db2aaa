import pytest
from hypothesis import given, strategies as st

from vmac.model import table_i_config
from vmac.topology import (S, OperationalState, conduction_set, equivalent_capacitances,
                           gamma_matrix, modal_frequencies, state_diode, state_matrices)


def test_state_diodes_three_stage():
    assert [state_diode(s, 3) for s in range(1, 9)] == [1, 4, 2, None, None, 5, 3, 1]


def test_state_diodes_four_stage():
    assert [state_diode(s, 4) for s in range(1, 9)] == [1, 6, 2, None, None, 7, 3, 1]


def test_bad_state():
    with pytest.raises(ValueError):
        OperationalState.coerce(9)


def test_gamma_matrix_three_stage():
    g = gamma_matrix(3)
    # columns: Cout1..3, Cra, Cp, Ca1, Ca2
    assert g[0] == [S, 0, 0, 0, 0, 0, 0]
    assert g[1] == [S, S, 0, 0, 0, -1, -1]
    assert g[2] == [S, 0, 0, 0, 0, -1, 0]
    assert g[3] == [S, S, S, 0, -1, 0, 0]
    assert g[4] == [S, S, S, -1, -1, 0, 0]
    assert g[5] == [S, S, S, -1, 0, -1, -1]
    assert g[6] == [S, S, 0, -1, 0, -1, 0]
    assert g[7] == [S, 0, 0, -1, 0, 0, 0]


def test_conduction_sets():
    assert conduction_set(4).names() == {"Ma"}
    assert conduction_set(5).names() == set()
    assert conduction_set(6).names() == {"Mca", "D5"}


def test_equivalent_capacitances(table_cfg):
    g12, g22 = equivalent_capacitances(1, table_cfg)
    assert g12 == 0.0 and g22 == 0.0
    g12, g22 = equivalent_capacitances(8, table_cfg)
    assert g12 == pytest.approx(1 / table_cfg.c_ra) and g22 == pytest.approx(g12)
    g12, g22 = equivalent_capacitances(6, table_cfg)
    assert g12 == pytest.approx(1 / (table_cfg.c_ra + table_cfg.c_c))
    assert g22 - g12 == pytest.approx(2 / table_cfg.c_a)


@given(st.integers(1, 8), st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_modal_frequencies_real(state, k_la, k_lra, k_ca):
    cfg = table_i_config(l_a=50e-6 * k_la, l_ra=5e-6 * k_lra, c_a=330e-9 * k_ca)
    w1, w2, big, z4 = modal_frequencies(cfg, *equivalent_capacitances(state, cfg))
    assert w1 >= w2 >= 0
    assert w1 ** 2 + w2 ** 2 == pytest.approx(2 * big ** 2, rel=1e-9)
    assert (w1 * w2) ** 2 == pytest.approx(z4, rel=1e-6, abs=1e-9 * big ** 4)


@pytest.mark.parametrize("state", range(1, 9))
def test_state_matrices_shape(table_cfg, state):
    sysm = state_matrices(state, table_cfg)
    n = len(sysm.labels)
    assert sysm.A.shape == (n, n) and sysm.B.shape == (n,)
    assert sysm.labels[:3] == ["i_la", "i_lra", "v_cra"]
