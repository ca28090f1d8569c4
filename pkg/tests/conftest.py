import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatsr.camera import Camera  # noqa: E402
from splatsr.scene import GaussianScene  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_scene(rng, n, opacity=None, degree=1, spread=0.5, depth=3.0, dtype=np.float64):
    q = rng.normal(size=(n, 4))
    centers = rng.uniform(-spread, spread, size=(n, 3))
    centers[:, 2] += depth
    alpha = rng.uniform(0.1, 0.95, n) if opacity is None else np.full(n, opacity)
    k = (degree + 1) ** 2
    return GaussianScene(centers, alpha, q / np.linalg.norm(q, axis=1, keepdims=True),
                         rng.uniform(0.05, 0.3, size=(n, 3)), rng.normal(0, 0.5, size=(n, k, 3)),
                         sh_degree=degree, dtype=dtype)


def axis_camera(size=16, f=20.0):
    """Identity pose looking down +z with the principal point at the image center."""
    c = (size - 1) / 2
    return Camera(f, f, c, c, np.eye(3), np.zeros(3), size, size)


# --- acceptance report ----------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    if rep.failed:
        _CRITERIA[n] = (title, "FAIL")
    elif rep.skipped:
        _CRITERIA.setdefault(n, (title, "SKIP"))
    elif rep.when == "call":
        _CRITERIA[n] = (title, "PASS")
    detail = getattr(item, "criterion_detail", "")
    if detail and n in _CRITERIA:
        _CRITERIA[n] = (f"{title} ({detail})", _CRITERIA[n][1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
