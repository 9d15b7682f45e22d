import numpy as np
import pytest
from hypothesis import settings

from evci_soc.ridge import CvConfig, design_matrix, grid_search_cv
from evci_soc.simulator import SimConfig, schedule_sessions, simulate_detailed
from evci_soc.telemetry import PORTS, split_dataset

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def day_run():
    """Seeded one-day simulation with the default plant."""
    cfg = SimConfig(seed=11, duration=86400)
    return cfg, simulate_detailed(cfg, schedule_sessions(cfg))


@pytest.fixture(scope="session")
def default_run():
    """Default five-day run split 4 + 1 days."""
    cfg = SimConfig()
    res = simulate_detailed(cfg, schedule_sessions(cfg))
    train, test = split_dataset(res.series)
    return cfg, res, train, test


@pytest.fixture(scope="session")
def trained(default_run):
    """Per-port ridge models chosen by 20-fold grid search on the training days."""
    _, _, train, test = default_run
    out = {}
    for port in PORTS:
        dtr = design_matrix(train, port).clean()
        model, report = grid_search_cv(dtr.X, dtr.y, CvConfig(), dtr.feature_names)
        out[port] = (model, report)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _builders import CRITERIA, RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        terminalreporter.write_line(RESULTS.get(n, f"criterion {n:>2} FAIL  {CRITERIA[n]}: did not complete"))
