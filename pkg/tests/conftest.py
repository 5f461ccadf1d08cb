import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aeroio.aerodynamics import AeroCoefficients
from aeroio.sensor_sim import NoiseConfig, TrajectorySpec, simulate

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def coeffs():
    return AeroCoefficients()


@pytest.fixture(scope="session")
def clean_seq(coeffs):
    """Noise-free 10 s random_smooth flight at 200 Hz."""
    return simulate(TrajectorySpec("random_smooth", 10.0, 200.0, speed=3.0, vertical_speed=1.0, seed=4), coeffs)


@pytest.fixture(scope="session")
def noisy_seq(coeffs):
    noise = NoiseConfig(sigma_g=0.005, sigma_a=0.05, sigma_bg=2e-4, sigma_ba=2e-3, seed=11)
    return simulate(TrajectorySpec("random_smooth", 20.0, 100.0, speed=3.0, vertical_speed=1.0, seed=5),
                    coeffs, noise)


def random_rotation(rng):
    from aeroio.geometry import exp_map

    axis = rng.normal(size=3)
    return exp_map(axis / np.linalg.norm(axis) * rng.uniform(0, np.pi - 1e-3))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
