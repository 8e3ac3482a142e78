import numpy as np
import pytest

from kshap.simulator import pi3_config, run_market


@pytest.fixture(scope="session")
def small_market():
    """A short market session; large enough for forests and SHAP, quick to build."""
    return run_market(pi3_config(seed=3, horizon=2400.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test still asserts its own outcome."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, title, passed, detail, seconds):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail} | {seconds:.1f} s"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
