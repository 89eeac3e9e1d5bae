import numpy as np
import pytest

from wsplat.renderer import Camera, Gaussians, look_at

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_gaussians(rng, n, spread=0.4, scale=(0.03, 0.15), opacity=(0.2, 0.95)):
    means = rng.uniform(-spread, spread, size=(n, 3))
    scales = rng.uniform(*scale, size=(n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(*opacity, size=n)
    colors = rng.uniform(0.05, 0.95, size=(n, 3))
    return Gaussians(means, scales, q, opac, colors)


def small_camera(width=32, height=30, eye=(0.3, -2.2, 0.6), f=40.0):
    return Camera(f, f * 1.05, (width - 1) / 2 + 0.3, (height - 1) / 2 - 0.2, width, height,
                  look_at(np.array(eye), np.zeros(3)))
