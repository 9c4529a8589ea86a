"""Shared fixtures: bounds, desk-scale rendering setup, small object
libraries, a pretrained classifier, and analytic loss landscapes used to
exercise the attack without any rendering in the loop.
"""

import numpy as np
import pytest

from viewlab.classifier import Architecture, init_classifier
from viewlab.evalbench import DESK_INTRINSICS, _pretrained_classifier
from viewlab.geometry import default_bounds
from viewlab.renderer import make_object_library
from viewlab.viat import pretrain_classifier


@pytest.fixture(scope="session")
def bounds():
    return default_bounds()


@pytest.fixture(scope="session")
def desk_intr():
    return DESK_INTRINSICS


@pytest.fixture(scope="session")
def tiny_library():
    # 2 classes x 2 objects, enough for sharing/batching logic
    return make_object_library(2, 2, seed=1)


@pytest.fixture(scope="session")
def desk_library():
    return make_object_library(3, 2, seed=0)


@pytest.fixture(scope="session")
def desk_classifier(desk_library):
    return _pretrained_classifier(desk_library, 0, DESK_INTRINSICS)


@pytest.fixture(scope="session")
def micro_classifier():
    # smallest architecture that still has two hidden layers
    arch = Architecture(input_hw=(4, 4), hidden=(3, 3), num_classes=2)
    return init_classifier(arch, seed=0)


class SingleBumpLoss:
    """Smooth unimodal loss over (psi, phi); the other axes are ignored.
    Plays the part of the black-box model for convergence tests where the
    true optimum must be known."""

    PSI0, PHI0 = 70.0, 120.0

    def __init__(self):
        self.query_count = 0

    @staticmethod
    def value(psi, phi):
        return np.exp(
            -(
                (psi - SingleBumpLoss.PSI0) ** 2 / (2 * 35.0**2)
                + (phi - SingleBumpLoss.PHI0) ** 2 / (2 * 20.0**2)
            )
        )

    def __call__(self, vp):
        self.query_count += 1
        return float(self.value(vp.psi, vp.phi))


class TwoBumpLoss:
    """Two symmetric off-center bumps with a shallow dip at psi=0, the shape
    a viewpoint-loss landscape takes when the natural view is easy and two
    distinct regions are hard. Maxima sit near (+-118.75, 90)."""

    def __init__(self):
        self.query_count = 0

    @staticmethod
    def value(psi, phi):
        return (
            0.5
            + np.exp(-((psi - 115) ** 2 / (2 * 40.0**2) + (phi - 90) ** 2 / (2 * 25.0**2)))
            + np.exp(-((psi + 115) ** 2 / (2 * 40.0**2) + (phi - 90) ** 2 / (2 * 25.0**2)))
            - 0.5 * np.exp(-(psi**2 / (2 * 60.0**2) + (phi - 90) ** 2 / (2 * 50.0**2)))
        )

    def __call__(self, vp):
        self.query_count += 1
        return float(self.value(vp.psi, vp.phi))


@pytest.fixture
def single_bump_oracle():
    return SingleBumpLoss()


@pytest.fixture
def two_bump_oracle():
    return TwoBumpLoss()


# One line per end-to-end acceptance check, echoed after the run so the
# verdicts are visible even with output capture on.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checklist")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
