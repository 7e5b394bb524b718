import numpy as np
import pytest

from audron.features import featurize
from audron.synthgen import DRONE_CLASSES, SynthParams, synthesize


def synth_clips(per_class: int, seed: int = 0) -> tuple:
    """per_class clips of each built-in class, class-major order; labels follow DRONE_CLASSES."""
    waves, labels = [], []
    for ci, drone in enumerate(DRONE_CLASSES):
        for i in range(per_class):
            waves.append(synthesize(drone, SynthParams(), seed=seed * 1000 + ci * 100 + i).samples)
            labels.append(ci)
    return np.stack(waves), np.array(labels)


@pytest.fixture(scope="session")
def eight_clips():
    """Featurized 8-clip set (2 per class) with its normalizer."""
    waves, labels = synth_clips(2)
    return featurize(waves, labels)


@pytest.fixture(scope="session")
def four_clips(eight_clips):
    """Held-out clips (1 per class) normalized with the eight-clip statistics."""
    waves, labels = synth_clips(1, seed=1)
    return featurize(waves, labels, norm=eight_clips[1])[0]


_CRITERIA: list = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(name, passed, detail). Lines are printed in the summary."""

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
