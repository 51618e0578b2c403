import numpy as np
import pytest

from buildsentinel.core import AlignedFrame


def make_frame(values, period=60, start=1_600_000_000, columns=None, mask=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    R, D = values.shape
    if columns is None:
        columns = tuple(f"dev{j}/s" for j in range(D))
    grid = start + period * np.arange(R, dtype=np.int64)
    return AlignedFrame(grid, period, tuple(columns), values, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ----------------------------------------------------------

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def report(request):
    """``report(ok, detail)`` prints and records one PASS/FAIL line for the
    test's criterion.  A test that dies before reporting is recorded as FAIL."""
    n = request.node.get_closest_marker("criterion").args[0]

    def _report(ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance[n] = line
        print(line)
        return ok

    yield _report
    if n not in _acceptance:
        _acceptance[n] = f"criterion {n:>2}: FAIL  did not complete"


def pytest_terminal_summary(terminalreporter):
    if _acceptance:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_acceptance):
            terminalreporter.write_line(_acceptance[n])
