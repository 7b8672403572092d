import numpy as np
import pytest

from risradar.geometry import Scenario, table_default_scenario


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from tests.test_acceptance import RESULTS
    except Exception:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(RESULTS):
        passed, detail = RESULTS[criterion]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {criterion:>2}: {status}  {detail}")


@pytest.fixture(scope="session")
def desk_scenario():
    return table_default_scenario()


@pytest.fixture(scope="session")
def mini_scenario():
    """Tiny numerology for element-wise oracles: T_half=2, N=3, N_u=2."""
    return Scenario(
        ue_state=np.zeros(6),
        ris_state=np.array([3.0, 5.0, 6.0, 0.0, 0.0, 0.0]),
        fc=15e9,
        delta_f=120e3,
        n_subcarriers=3,
        n_symbols=4,
        ue_array=(2, 1),
        ris_array=(4, 4),
        total_energy_dbm=65.0,
        noise_psd_dbm=-166.0,
    )


@pytest.fixture(scope="session")
def small_scenario():
    """Reduced desk scenario for fast pipeline tests."""
    return Scenario(
        ue_state=np.zeros(6),
        ris_state=np.array([3.0, 5.0, 6.0, 0.0, 0.0, 0.0]),
        fc=15e9,
        delta_f=120e3,
        n_subcarriers=25,
        n_symbols=18,
        ue_array=(2, 2),
        ris_array=(12, 12),
        total_energy_dbm=65.0,
        noise_psd_dbm=-166.0,
    )
