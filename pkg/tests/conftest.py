import numpy as np
import pytest

from cvis_forge.geometry import CameraExtrinsics, CameraIntrinsics
from cvis_forge.template import make_procedural_template


@pytest.fixture(scope="session")
def sedan():
    return make_procedural_template(0)


@pytest.fixture(scope="session")
def sedan_b():
    return make_procedural_template(1)


@pytest.fixture
def toy_camera():
    return CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


@pytest.fixture
def small_camera():
    k = CameraIntrinsics(500.0, 500.0, 159.5, 119.5, 320, 240)
    e = CameraExtrinsics.look_at([6.0, -3.5, 3.0], [0.0, 0.0, 0.7])
    return k, e


def random_rotation(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion and print it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}" + (f" ({detail})" if detail else "")
        print(line)
        request.config._acceptance_lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
