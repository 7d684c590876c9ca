from __future__ import annotations

import numpy as np
import pytest

from volfuse.phantom import BeamModel, PhantomScene, TiltedFiber, generate_multifocus
from volfuse.volume import Volume

_ACCEPTANCE_LINES: list[str] = []


def small_scene() -> PhantomScene:
    """A 24x24x16 tilted fiber, cheap enough for many fusion runs."""
    return PhantomScene(
        dims=(24, 24, 16),
        spacing=(1.0, 1.0, 2.0),
        geometry=TiltedFiber((7.0, 12.0, 2.0), (17.0, 12.0, 28.0), 2.0),
    )


def small_sources(foci_index=(4, 11)):
    scene = small_scene()
    dz = scene.spacing[2]
    return generate_multifocus(scene, [i * dz for i in foci_index], BeamModel())


def random_volume(rng, shape, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(rng.standard_normal(shape), spacing)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_pair():
    sources, truth = small_sources()
    return sources, truth


@pytest.fixture(scope="session")
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
