import numpy as np
import pytest

from demea import shapes
from demea.edl import bind_skinning
from demea.hierarchy import build_hierarchy, extract_graph


@pytest.fixture(scope="session")
def sphere():
    return shapes.icosphere(2)


@pytest.fixture(scope="session")
def sphere_hierarchy(sphere):
    graph = extract_graph(sphere, 42)
    return build_hierarchy(sphere, graph, [162, 42, 12])


@pytest.fixture(scope="session")
def bar():
    return shapes.ellipsoid_bar()


@pytest.fixture(scope="session")
def bar_hierarchy(bar):
    graph = extract_graph(bar, 128)
    return build_hierarchy(bar, graph, [506, 128, 32, 8])


@pytest.fixture(scope="session")
def bar_binding(bar, bar_hierarchy):
    return bind_skinning(bar, bar_hierarchy.graph, bar_hierarchy.graph_level)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    def record(name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
