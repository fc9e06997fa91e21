import numpy as np
import pytest

from pdmmkf import build_graph, build_problem

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def two_node():
    """Sigma = 1 at both nodes, a = (1, 3), constraint x_0 - x_1 = 0."""
    g = build_graph(2, [(0, 1)])
    return build_problem(g, [(1.0, 1.0), (1.0, 3.0)], [(1.0, -1.0, 0.0)])


@pytest.fixture
def scalar_chain():
    """Chain 0-1-2 with Sigma = 1, a = (1, 1, 0) and x_i - x_j = 0 on each edge."""
    g = build_graph(3, [(0, 1), (1, 2)])
    return build_problem(g, [(1.0, 1.0), (1.0, 1.0), (1.0, 0.0)],
                         [(1.0, -1.0, 0.0), (1.0, -1.0, 0.0)])


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""
    def _report(number: int, title: str, worst: float, tol: float, passed: bool | None = None):
        ok = worst <= tol if passed is None else passed
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} (worst {worst:.3e}, tol {tol:.0e})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
