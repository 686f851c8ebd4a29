import numpy as np
import pytest
from hypothesis import settings

from skinfer.model_core import (
    InitialCondition,
    KineticModel,
    NormalOnLog,
    ObservationModel,
    Prior,
    build_network,
)

import _report

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in _report.LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def lv_net():
    return build_network(["X1", "X2"], [({"X1": 1}, {"X1": 2}), ({"X1": 1, "X2": 1}, {"X2": 2}), ({"X2": 1}, {})])


@pytest.fixture
def id_net():
    return build_network(["X1"], [({}, {"X1": 1}), ({"X1": 1}, {})])


def immigration_model(sigma=1.0, m=2, initial=None, approximation="cle"):
    """Pure immigration: one reaction with constant hazard c1, so the CLE is Gaussian."""
    net = build_network(["X"], [({}, {"X": 1})])
    obs = ObservationModel([[1.0]], sigma ** 2)
    initial = initial or InitialCondition("gaussian", mean=(10.0,), sd=(2.0,))
    return KineticModel(net, obs, initial, Prior((NormalOnLog(0.0, 10.0),)), approximation, m=m,
                        name="immigration")
