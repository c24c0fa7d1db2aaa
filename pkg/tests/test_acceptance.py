"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line with the worst deviation before
asserting, so the outcome of every criterion appears in the test log even
when an earlier one fails.
"""

import pytest

from vmac import validation as v
from vmac.model import table_i_config


@pytest.fixture(scope="module")
def cfg():
    return table_i_config()


def report(capsys, number, *results):
    with capsys.disabled():
        for res in results:
            print(f"\n[criterion {number}] {res.line()}")


def test_criterion_1_per_state_waveforms(capsys, cfg):
    res = v.check_per_state(cfg)
    report(capsys, 1, res)
    assert res.passed
    assert res.seconds < 1.0


def test_criterion_2_clamp_voltage_limit(capsys):
    res = v.check_clamp_limit(table_i_config(r_load=1000.0))
    report(capsys, 2, res)
    assert res.passed


def test_criterion_3_steady_state_invariants(capsys, cfg):
    res = v.check_invariants(cfg)
    report(capsys, 3, res)
    assert res.passed


def test_criterion_4_gain_sweep(capsys, cfg):
    r3 = v.check_gain_sweep(cfg, m_stages=3)
    r4 = v.check_gain_sweep(cfg, m_stages=4)
    report(capsys, 4, r3, r4)
    assert r3.passed and r4.passed
    assert r3.seconds + r4.seconds < 30.0


def test_criterion_5_rated_output_corners(capsys, cfg):
    res = v.check_corners(cfg)
    report(capsys, 5, res)
    assert res.passed


def test_criterion_6_zero_voltage_switching(capsys, cfg):
    res = v.check_zvs(cfg)
    report(capsys, 6, res)
    assert res.passed


def test_criterion_7_capacitor_ripples(capsys, cfg):
    res = v.check_ripples(cfg)
    report(capsys, 7, res)
    assert res.passed


def test_criterion_8_simulator_self_checks(capsys, cfg):
    res = v.check_oracle_self(cfg)
    report(capsys, 8, res)
    assert res.passed
