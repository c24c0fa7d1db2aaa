import pytest

from vmac.model import table_i_config


@pytest.fixture(scope="session")
def table_cfg():
    return table_i_config()


@pytest.fixture(scope="session")
def solved(table_cfg):
    """Closed-form period at 1 kOhm and D = 0.75, inside the consistent region."""
    from vmac.steady_state import solve_steady_state
    return solve_steady_state(table_cfg.with_(r_load=1000.0), 0.75)


@pytest.fixture(scope="session")
def simulated(table_cfg):
    """Simulated period at a soft-switching point."""
    from vmac.oracle import run_periodic_steady_state
    return run_periodic_steady_state(table_cfg.with_(r_load=769.2), duty_ma=0.5, strict=False)
