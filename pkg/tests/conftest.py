from __future__ import annotations

import numpy as np
import pytest

from freehand.synth import ImageGeometry, PhantomSpec, TrajectorySpec, generate_scan

SMALL = ImageGeometry(32, 32, 1.5)


def make_scan(shape="c_shape", n_frames=30, seed=0, orientation="perpendicular", speed="jitter", scan_id=None, **kw):
    traj = TrajectorySpec(shape, kw.pop("length_mm", 120.0), n_frames, orientation, speed, **kw)
    return generate_scan(traj, PhantomSpec(seed=seed), SMALL, seed=seed, scan_id=scan_id or f"{shape}_{seed}")


@pytest.fixture
def scan():
    return make_scan()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(mod.VERDICTS):
            terminalreporter.write_line(line)
