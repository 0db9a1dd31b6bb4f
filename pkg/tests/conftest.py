from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vendsynth.assets import load_library, load_texture_pool, write_demo_assets  # noqa: E402
from vendsynth.camera import CameraPose, FisheyeCamera, FisheyeDistortion, PinholeIntrinsics  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    lib, tex = write_demo_assets(root, seed=0)
    return root, lib, tex


@pytest.fixture(scope="session")
def library(demo_dirs):
    return load_library(demo_dirs[1])


@pytest.fixture(scope="session")
def textures(demo_dirs):
    return load_texture_pool(demo_dirs[2])


def make_camera(size: int = 128, k=(0.0, 0.0, 0.0, 0.0), eye=(0.0, 0.45, 0.0), fov_scale: float = 0.3,
                theta_max_deg: float = 75.0) -> FisheyeCamera:
    f = fov_scale * size
    return FisheyeCamera(
        PinholeIntrinsics(f, f, (size - 1) / 2, (size - 1) / 2, size, size),
        FisheyeDistortion(*k),
        CameraPose.look_at(eye, (0.0, 0.0, 0.0)),
        theta_max=math.radians(theta_max_deg),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
