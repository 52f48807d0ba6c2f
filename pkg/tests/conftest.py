import json

import numpy as np
import pytest

from affordgvf import _kernels
from affordgvf.config import fixture_path
from affordgvf.envs import ChainWorld, GridWorld

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _ACCEPTANCE[report.nodeid] = (props["criterion"], props.get("title", ""), report.outcome,
                                      props.get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, measured in sorted(_ACCEPTANCE.values()):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number:2d}  {status}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile kernels once so timed sections exclude JIT cost."""
    _kernels.warmup()
    if _kernels.numba_impl is not None:
        _kernels.warmup(_kernels.numba_impl)


@pytest.fixture
def chain():
    return ChainWorld(5)


@pytest.fixture
def small_grid():
    return GridWorld(3, 3, slip=0.1, goal=[(2, 2)], start=(0, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_fixture(name):
    with open(fixture_path(name), encoding="utf-8") as fh:
        return json.load(fh)
