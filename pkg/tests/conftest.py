import numpy as np
import pytest

from real2sim.geometry import rotvec_to_matrix
from real2sim.kinematics import default_robot, default_skeleton


def smooth_robot_motion(robot, T, seed=0, fps=30.0, amp=0.4, height=1.0):
    """A smooth, within-limits robot trajectory: root pose and joint angles."""
    rng = np.random.default_rng(seed)
    t = np.arange(T) / fps
    lo = np.where(np.isfinite(robot.lower), robot.lower, -1.0)
    hi = np.where(np.isfinite(robot.upper), robot.upper, 1.0)
    mid = np.clip(0.0, lo + 0.3, hi - 0.3)
    a = np.minimum(amp, (hi - lo) / 4)
    phase = rng.uniform(0, 2 * np.pi, robot.n_dof)
    freq = rng.uniform(0.2, 0.8, robot.n_dof)
    q = np.clip(mid + a * np.sin(2 * np.pi * freq * t[:, None] + phase), lo, hi)
    rv = np.stack([0.1 * np.sin(t), 0.1 * np.cos(0.7 * t), 0.5 * t], axis=1)
    root_R = rotvec_to_matrix(rv)
    root_t = np.stack([0.5 * t, 0.1 * np.sin(t), np.full(T, height)], axis=1)
    return root_R, root_t, q


@pytest.fixture(scope="session")
def robot():
    return default_robot()


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


class Criterion:
    """Collects checks for one acceptance criterion and records a single PASS/FAIL line."""

    def __init__(self, config, number, title):
        self.config, self.number, self.title = config, number, title
        self.failures, self.notes = [], []

    def check(self, ok, detail):
        self.notes.append(detail)
        if not ok:
            self.failures.append(detail)
        return ok

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            self.failures.append(f"raised {exc_type.__name__}: {exc}")
        status = "PASS" if not self.failures else "FAIL"
        shown = self.failures if self.failures else self.notes
        line = f"criterion {self.number:2d} {status}  {self.title}: " + "; ".join(shown)
        self.config.stash[ACCEPTANCE].append((self.number, line))
        print(line)
        if exc is None:
            assert not self.failures, line
        return False


@pytest.fixture
def criterion(request):
    return lambda number, title: Criterion(request.config, number, title)
