import numpy as np
import pytest

from pegeo.synth import SceneSpec, make_scene
from pegeo.toyvit import ToyViTConfig, build_model


@pytest.fixture(scope="session")
def model():
    return build_model(ToyViTConfig())


@pytest.fixture(scope="session")
def small_model():
    return build_model(ToyViTConfig(image_size=32, patch_size=8, dim=32, heads=2, layers=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def random_scenes():
    return [make_scene(SceneSpec("random-texture", 128, None, s)) for s in range(6)]


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
