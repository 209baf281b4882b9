import numpy as np
import pytest

from refreshmi.data import Schema, concatenate
from refreshmi.simulation import DEPENDENT, ScenarioSpec, generate_truth, mask_for_design
from refreshmi.rng import make_rng


@pytest.fixture
def small_schema():
    return Schema.from_roles([("x", "X", 3), ("y1", "Y1", 2), ("y2", "Y2", 2)])


@pytest.fixture
def tiny_dataset(small_schema):
    panel = [[1, 1, 2], [2, 2, None], [3, None, 1], [1, 2, None]]
    refresh = [[2, None, 1], [None, None, 2]]
    return concatenate(panel, [1, 0, 1, 0], refresh, small_schema)


def small_scenario(n_panel=300, n_refresh=150) -> ScenarioSpec:
    return ScenarioSpec(
        "small", DEPENDENT.pi, DEPENDENT.rho, DEPENDENT.psi_y1, DEPENDENT.psi1, DEPENDENT.psi0,
        n_panel=n_panel, n_refresh=n_refresh,
    )


@pytest.fixture
def sim_dataset():
    truth = generate_truth(small_scenario(), make_rng(123, 0, 0))
    return mask_for_design(truth)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(2024))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
