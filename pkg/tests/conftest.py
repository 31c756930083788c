import numpy as np
import pytest
from hypothesis import strategies as st

from mio.se3 import PoseSE3


def random_pose(rng, scale=10.0):
    q = rng.normal(size=4)
    return PoseSE3(q / np.linalg.norm(q), rng.uniform(-scale, scale, 3))


@st.composite
def poses(draw, scale=10.0):
    q = np.array(draw(st.lists(st.floats(-1, 1), min_size=4, max_size=4)))
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    t = draw(st.lists(st.floats(-scale, scale), min_size=3, max_size=3))
    return PoseSE3(q, t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if call.when == "setup" and call.excinfo is not None:
        _ACCEPTANCE[n] = (title, "FAIL", "setup error")
    elif call.when == "call":
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _ACCEPTANCE[n] = (title, "FAIL" if call.excinfo is not None else "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[n]
        line = f"[{status}] {n:2d}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
