import datetime as dt

import numpy as np
import pytest

from stsir.forecast import scenario_from_dict, simulate_panel
from stsir.ingest import AdjacencyGraph, PanelData


def make_panel(sym, deaths=None, sus_init=1e5, poverty=None, start=dt.date(2020, 4, 1)):
    sym = np.atleast_2d(np.asarray(sym, dtype=np.int64))
    m, T = sym.shape
    deaths = np.zeros_like(sym) if deaths is None else np.atleast_2d(np.asarray(deaths, dtype=np.int64))
    poverty = np.zeros(m) if poverty is None else poverty
    return PanelData(
        [f"R{i:02d}" for i in range(m)], [start + dt.timedelta(days=j) for j in range(T)],
        sym, deaths, np.broadcast_to(np.asarray(sus_init, float), (m,)).copy(),
        np.asarray(poverty, float),
    )


def recovery_scenario(seed=0, T=60, **over):
    d = {"m": 10, "T": T, "seed": seed, "model": {"variant": 3, "phi": 0.25},
         "params": {"b0": -9.5, "b1": 0.8, "b2": 0.5, "tau_b": 4.0}, "sus_init": 1e5}
    d.update(over)
    return scenario_from_dict(d)


@pytest.fixture
def small_sim():
    """A 4-region, 12-day M3 panel with moderate counts."""
    sc = scenario_from_dict({"m": 4, "T": 12, "seed": 5, "model": {"variant": 3},
                             "params": {"b0": -6.0, "b1": 0.5, "b2": 0.3}, "sus_init": 5000})
    return sc, simulate_panel(sc)


@pytest.fixture
def path_graph():
    return AdjacencyGraph.from_edges(3, [(0, 1), (1, 2)])


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
