import numpy as np
import pytest

from npgap.kernel import KernelSpec, NoiseModel
from npgap.nn import TrainConfig, train

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def noise():
    return NoiseModel(0.05)


def _trained(lengthscale):
    spec = KernelSpec.se(lengthscale)
    return train(TrainConfig(steps=4000), spec, NoiseModel(0.05), seed=0), spec


@pytest.fixture(scope="session")
def model_l02():
    """4000-step model on the l=0.2 SE prior, seed 0."""
    return _trained(0.2)


@pytest.fixture(scope="session")
def model_l05():
    return _trained(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance line; every line is echoed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        _CRITERIA.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
