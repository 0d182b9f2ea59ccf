import math

import numpy as np
import pytest

from spincal.dh import CalibrationVector, MountKind
from spincal.sim.scan import SensorModel, generate_scan
from spincal.sim.scenes import builtin_scene

OMNI = MountKind.SPINNING_OMNI
NON_OMNI = MountKind.SPINNING_NON_OMNI


def random_vector(rng, kind):
    return CalibrationVector(rng.uniform(-math.pi, math.pi), rng.uniform(-0.1, 0.1),
                             rng.uniform(-0.1, 0.1), rng.uniform(-math.pi, math.pi), kind)


def angle_diff(a, b):
    return (a - b + math.pi) % (2 * math.pi) - math.pi


@pytest.fixture(scope="session")
def planes40():
    return builtin_scene("planes40")


@pytest.fixture(scope="session")
def omni_gt():
    return CalibrationVector(math.radians(30), 0.05, -0.03, math.radians(70), OMNI)


@pytest.fixture(scope="session")
def non_omni_gt():
    return CalibrationVector(math.radians(10), -0.04, 0.06, math.radians(-50), NON_OMNI)


@pytest.fixture(scope="session")
def clean_scan_omni(planes40, omni_gt):
    sensor = SensorModel.mid360().noise_free().with_density(20_000)
    return generate_scan(planes40, omni_gt, sensor=sensor, seed=3)


@pytest.fixture(scope="session")
def clean_scan_non_omni(planes40, non_omni_gt):
    sensor = SensorModel.avia().noise_free().with_density(20_000)
    return generate_scan(planes40, non_omni_gt, sensor=sensor, seed=4)


@pytest.fixture(scope="session")
def noisy_scan_omni(planes40, omni_gt):
    sensor = SensorModel.mid360().with_density(20_000)
    return generate_scan(planes40, omni_gt, sensor=sensor, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    def record(number, title, ok, detail=""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
