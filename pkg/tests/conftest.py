import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vseg.synthetic import write_drive_like  # noqa: E402

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def drive_like(tmp_path_factory):
    """A small synthetic dataset in the DRIVE directory layout."""
    return write_drive_like(tmp_path_factory.mktemp("drive"), n_train=3, n_test=2, height=96, width=100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    label = item.get_closest_marker("criterion")
    if label is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE.append((label.args[0], status, rep.duration))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, dur in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:4s}  {name}  ({dur:.1f}s)")
