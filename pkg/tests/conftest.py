import sys

import numpy as np
import pytest
from hypothesis import settings

from coexsim.frame import FrameConfig, assign_pilots
from coexsim.rng import stream
from coexsim.scenario import NetworkConfig, draw_snapshot

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def small_net():
    return NetworkConfig(L=4, M=8, K=5, alpha=0.2)


@pytest.fixture
def small_snapshot(small_net):
    return draw_snapshot(small_net, stream(7, 0, 0, 0))


@pytest.fixture
def small_frame():
    return FrameConfig(tau_c=200, tau_p=10, T=4, n_d=40)


@pytest.fixture
def small_plan(small_snapshot, small_frame):
    return assign_pilots(small_frame.tau_p, small_snapshot.urllc_mask, stream(7, 0, 0, 1))


def herm(X):
    return np.conj(np.swapaxes(X, -1, -2))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
