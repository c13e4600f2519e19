import copy
import json

import pytest

from gridwave.cases import CASES, case_path


def case_doc(name):
    with open(case_path(name)) as fh:
        return json.load(fh)


def two_bus_doc(r=0.0, x=0.1, b=0.0, p=0.5, q=0.0):
    """Slack bus 1 held by an ideal source, PQ load on bus 2."""
    return {
        "base_mva": 100.0,
        "base_frequency_hz": 60.0,
        "buses": [{"name": "b1", "number": 1, "kind": "reference", "voltage": 1.0},
                  {"name": "b2", "number": 2, "kind": "PQ"}],
        "branches": [{"name": "l12", "from": 1, "to": 2, "r": r, "x": x, "b": b}],
        "loads": [{"name": "ld2", "bus": 2, "kind": "constant_power", "p": p, "q": q}],
        "devices": [{"name": "src", "bus": 1, "source": {}}],
    }


@pytest.fixture
def doc():
    return lambda name: copy.deepcopy(case_doc(name))


@pytest.fixture(params=CASES)
def case_name(request):
    return request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
