import numpy as np
import pytest
from hypothesis import settings

from eddm import scenarios
from eddm.deform import precompute_omega
from eddm.mesh import SmoothingConfig, cotangent_weights
from eddm.numerics import AffineTransform
from eddm.rig import quat_to_matrix

settings.register_profile("repeatable", derandomize=True)
settings.load_profile("repeatable")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


def random_rigid(rng: np.random.Generator, spread: float = 2.0) -> AffineTransform:
    return AffineTransform(random_rotation(rng), rng.uniform(-spread, spread, size=3))


def random_unit_quat(rng: np.random.Generator, max_angle: float = np.pi) -> tuple[float, ...]:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    half = 0.5 * rng.uniform(-max_angle, max_angle)
    return (*(np.sin(half) * axis), np.cos(half))


class Prepared:
    """A scenario with its smoothing weights and omega table built once."""

    def __init__(self, sc: scenarios.Scenario, precision: str = "double"):
        self.sc = sc
        self.cfg = SmoothingConfig()
        self.lap = cotangent_weights(sc.mesh, precision)
        self.omega = precompute_omega(sc.mesh, sc.weights, self.lap, self.cfg)


@pytest.fixture(scope="session")
def fig1():
    return Prepared(scenarios.fig1())


@pytest.fixture(scope="session")
def fig2():
    return Prepared(scenarios.fig2())


@pytest.fixture(scope="session")
def stress():
    return Prepared(scenarios.stress())


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
