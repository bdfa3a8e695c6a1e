"""Shared fixtures and the acceptance-summary terminal hook."""

import numpy as np
import pytest

from skycatch import synthgen, trajkit

# Populated by tests/test_acceptance.py; printed after the run.
ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []  # (criterion, status, note)


def record_acceptance(criterion: str, passed: bool, note: str = "") -> None:
    ACCEPTANCE_RESULTS.append((criterion, "PASS" if passed else "FAIL", note))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, note in ACCEPTANCE_RESULTS:
        line = f"{status}  {criterion}"
        if note:
            line += f"  ({note})"
        terminalreporter.write_line(line)


def make_parabola(v0=(3.0, 0.5, 5.0), p0=(0.0, 0.0, 1.0), n=140,
                  dt=trajkit.DEFAULT_DT, object_id="ball", trial_id="t0"):
    """Exact ballistic trajectory sampled at the capture rate."""
    t = np.arange(n) * dt
    pos = (np.asarray(p0, dtype=float) + np.outer(t, v0)
           + 0.5 * np.outer(t * t, trajkit.GRAVITY))
    return trajkit.make_trajectory(object_id, trial_id, dt, t, pos)


@pytest.fixture(scope="session")
def parabola():
    return make_parabola()


@pytest.fixture(scope="session")
def plane():
    return trajkit.PlaneSpec(0.6)


@pytest.fixture(scope="session")
def aero_trajectory(plane):
    """One strongly non-ballistic throw from the catalog dynamics."""
    profile = synthgen.ObjectProfile(object_id="glider", mass=0.04,
                                     drag_coeff=0.0016, lift_coeff=0.24)
    launch = synthgen.LaunchSpec(speed=7.0, elevation=1.0, azimuth=0.15)
    return synthgen.simulate(profile, launch, plane=plane, trial_id="glide0")


@pytest.fixture(scope="session")
def small_dataset(plane):
    """6 trials each of a ball-like and a spinning object (fast to build)."""
    ball = synthgen.ObjectProfile(object_id="ball", mass=0.2, drag_coeff=0.0008)
    spinner = synthgen.ObjectProfile(object_id="spinner", mass=0.03,
                                     drag_coeff=0.001, magnus_coeff=0.004,
                                     magnus_vector=(0.0, 0.0, 9.0))
    trajs = []
    for profile in (ball, spinner):
        for ti in range(6):
            seed = int(np.random.SeedSequence([11, hash(profile.object_id) % 997, ti])
                       .generate_state(1)[0])
            launch = synthgen.sample_launch(seed, profile, plane=plane)
            trajs.append(synthgen.simulate(profile, launch, plane=plane,
                                           trial_id=f"t{ti:03d}"))
    return trajs
