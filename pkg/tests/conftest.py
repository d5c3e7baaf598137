import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, vector, step=1e-5):
    """Finite-difference gradient of scalar ``f`` w.r.t. every entry of ``vector`` (mutated in place, then restored)."""
    grad = np.zeros_like(vector)
    for i in range(vector.size):
        old = vector[i]
        vector[i] = old + step
        hi = f()
        vector[i] = old - step
        lo = f()
        vector[i] = old
        grad[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
