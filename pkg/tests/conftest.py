import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flowdistill.core import CameraRig
from flowdistill.scene import (
    BandlimitedNoise,
    Box,
    ConstantPlane,
    LayeredBoxes,
    SceneSpec,
    render,
    stress_scene,
)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

RIG = CameraRig(100.0, 0.5)


@pytest.fixture
def rig():
    return RIG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_spec(**overrides) -> SceneSpec:
    """A 24x64 textured scene with two boxes in front of a 30 m plane."""
    base = dict(
        height=24,
        width=64,
        rig=RIG,
        depth_model=LayeredBoxes(background=30.0, boxes=(Box(4, 20, 30, 56, 4.0), Box(2, 14, 6, 24, 9.0))),
        texture_model=BandlimitedNoise(seed=3, max_freq=0.15),
        illumination_gain=1.0,
        illumination_bias=0.0,
        flow_noise_sigma=0.0,
    )
    base.update(overrides)
    return SceneSpec(**base)


@pytest.fixture
def small_scene():
    return render(small_spec(), 0)


@pytest.fixture
def plane_scene():
    return render(small_spec(depth_model=ConstantPlane(5.0)), 0)


@pytest.fixture(scope="session")
def stress():
    spec, pixel = stress_scene()
    return render(spec, 0), pixel


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
