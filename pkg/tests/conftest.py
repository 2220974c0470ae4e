import numpy as np
import pytest

from swarmcover.dynamics import SwarmState
from swarmcover.geometry import make_random_polygon, make_regular_polygon, unit_square


def grid_positions(k=3):
    return np.array([(1 / (2 * k) + a / k, 1 / (2 * k) + b / k) for a in range(k) for b in range(k)])


@pytest.fixture
def square():
    return unit_square()


@pytest.fixture
def grid_state():
    return SwarmState.at_rest(grid_positions())


@pytest.fixture(params=["square", "hexagon", "random"])
def any_poly(request):
    if request.param == "square":
        return unit_square()
    if request.param == "hexagon":
        return make_regular_polygon(6, 1.0)
    return make_random_polygon(7, 8, 0.5)


def numeric_grad(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f(x)
        flat[k] = old - h
        fm = f(x)
        flat[k] = old
        gf[k] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
