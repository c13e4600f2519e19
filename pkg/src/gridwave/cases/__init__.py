"""Bundled test systems."""
from importlib import resources

CASES = ("two_bus_machine", "omib", "three_bus_inverters", "three_bus_mixed",
         "three_machine", "islanded_droop")


def case_path(name):
    if name not in CASES:
        raise KeyError(f"unknown case '{name}'; available: {', '.join(CASES)}")
    return resources.files(__name__) / f"{name}.json"


def load_case(name):
    from ..system import load_system
    return load_system(case_path(name))
