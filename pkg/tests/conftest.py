import numpy as np
import pytest

from caflow.movie_io import Calibration, FlowField

# Per-criterion result lines from test_acceptance, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def astro_cal():
    return Calibration(8.0, 1.3)


def make_field(u, v, lam_min, lam_max=None, origin=(0, 0), extent=None,
               calibration=None, t_index=0):
    u = np.asarray(u, dtype=np.float64)
    shape = u.shape
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), shape).copy()
    lam_min = np.broadcast_to(np.asarray(lam_min, dtype=np.float64), shape).copy()
    lam_max = lam_min.copy() if lam_max is None else np.broadcast_to(
        np.asarray(lam_max, dtype=np.float64), shape).copy()
    if extent is None:
        extent = (shape[1] - origin[0], shape[0] - origin[1])
    return FlowField(u.copy(), v, lam_min, lam_max, origin, extent,
                     calibration or Calibration(8.0, 1.3), t_index)


def uniform_field(width, height, u, v, lam=10.0, t_index=0, calibration=None, origin=(0, 0)):
    return make_field(np.full((height, width), float(u)), float(v), lam, origin=origin,
                      calibration=calibration, t_index=t_index)
