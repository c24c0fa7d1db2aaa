import csv
import io

import pytest

from vmac import cli
from vmac.model import ConfigError

CONFIG = """# prototype at 1 kOhm
v_in_V = 120
r_load_ohm = 1000
l_a_uH = 50
l_ra_uH = 5
c_ra_nF = 3.3
c_c_nF = 200
c_a_nF = 330
c_out_uF = 100
f_s_kHz = 100
dead_time_ns = 350
m_stages = 3
n_legs = 2
duty = 0.75
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "proto.cfg"
    p.write_text(CONFIG)
    return p


def test_parse_units(cfg_file):
    rc = cli.load_config(str(cfg_file))
    c = rc.converter
    assert c.l_a == pytest.approx(50e-6) and c.c_ra == pytest.approx(3.3e-9)
    assert c.f_s == pytest.approx(1e5) and c.dead_time == pytest.approx(350e-9)
    assert c.r_load == 1000.0 and rc.duty == 0.75


def test_unknown_key_names_key():
    with pytest.raises(ConfigError, match="l_a_mH"):
        cli.parse_config_text("l_a_mH = 50\n")


@pytest.mark.parametrize("text", ["v_in_V 120", "v_in_V = abc", "m_stages = 2.5",
                                  "duty = 1.2", "v_in_V = nan"])
def test_malformed(text):
    with pytest.raises(ConfigError):
        cli.parse_config_text(text)


def test_bad_key_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("volts = 120\n")
    assert cli.main(["steady", "--config", str(p)]) == cli.EXIT_CONFIG
    assert "volts" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["steady", "--config", str(tmp_path / "nope.cfg")]) == cli.EXIT_CONFIG


def test_fmt():
    assert cli.fmt(1.0) == "1.00000000000e+00"
    assert cli.fmt(True) == "1" and cli.fmt(float("nan")) == ""


def test_steady_writes_waveforms(cfg_file, tmp_path, capsys):
    out = tmp_path / "wave.csv"
    assert cli.main(["steady", "--config", str(cfg_file), "--out", str(out)]) == cli.EXIT_OK
    report = capsys.readouterr().out
    assert "V_out" in report and "ZVS pass" in report
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["time_s", "leg", "i_la_A", "i_lra_A", "v_cra_V", "v_cc_V", "v_ca1_V",
                       "v_ca2_V", "v_cout1_V", "v_cout2_V", "v_cout3_V", "state_index"]
    assert {r[1] for r in rows[1:]} == {"0", "1"}
    assert {r[-1] for r in rows[1:]} == {str(s) for s in range(1, 9)}
    # deterministic output
    out2 = tmp_path / "wave2.csv"
    cli.main(["steady", "--config", str(cfg_file), "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_steady_infeasible_duty(cfg_file, capsys):
    code = cli.main(["steady", "--config", str(cfg_file), "--duty", "0.99"])
    assert code == cli.EXIT_NONCONV
    assert "residual" in capsys.readouterr().err


def test_steady_mode_violation(cfg_file):
    code = cli.main(["steady", "--config", str(cfg_file), "--duty", "0.6"])
    assert code in (cli.EXIT_MODE, cli.EXIT_NONCONV)


def test_sweep_single_point(cfg_file, capsys):
    code = cli.main(["sweep", "--config", str(cfg_file), "--var", "duty", "--min", "0.76",
                     "--max", "0.76", "--points", "1", "--out", "-"])
    assert code == cli.EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0][:3] == ["sweep_value", "m_gain", "gain_bound"]
    assert rows[0][-3:] == ["zvs_pass", "iterations", "status"]
    assert len(rows) == 2 and rows[1][-1] == "ok"


def test_sweep_flags_failures(cfg_file, tmp_path):
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep", "--config", str(cfg_file), "--var", "duty", "--min", "0.6",
                     "--max", "0.8", "--points", "5", "--out", str(out), "--permissive"])
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(out.open()))
    values = [float(r["sweep_value"]) for r in rows]
    assert values == sorted(values) and len(rows) == 5
    ok = [r for r in rows if r["status"] == "ok"]
    assert ok and any(r["status"] != "ok" for r in rows)
    gains = [float(r["m_gain"]) for r in ok]
    assert gains == sorted(gains)
    for r in ok:
        assert float(r["m_gain"]) <= float(r["gain_bound"])


def test_sweep_bad_range(cfg_file):
    assert cli.main(["sweep", "--config", str(cfg_file), "--min", "0.8", "--max", "0.7",
                     "--points", "3"]) == cli.EXIT_CONFIG


def test_zvs_command(cfg_file, capsys):
    assert cli.main(["zvs", "--config", str(cfg_file)]) == cli.EXIT_OK
    assert "margin" in capsys.readouterr().out
