import pytest

from v2g_menu.config import SimConfig

SMALL = {
    "station.horizon": 8,
    "arrivals.on_peak_rate": 3.0,
    "arrivals.off_peak_rate": 2.0,
    "arrivals.on_peak_start": 2,
    "arrivals.on_peak_end": 6,
    "tariff.on_peak_start": 2,
    "tariff.on_peak_end": 6,
    "grid.energy_max": 8,
    "grid.bu_max": 3.0,
    "grid.deadline_span": 4,
    "replicates": 2,
}


@pytest.fixture
def small_config() -> SimConfig:
    """An eight-slot day that simulates in well under a second."""
    return SimConfig().replace(**SMALL)
