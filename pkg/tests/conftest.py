import numpy as np
import pytest

from gdsr.autograd import Tensor, make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def sq(x: Tensor) -> Tensor:
    return x * x


def rand_t(rng, *shape, scale=1.0, grad=False):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=grad)


def weighted_sum(x: Tensor, rng_seed: int = 99) -> Tensor:
    """Scalar probe with a fixed random weight per entry, so every gradient entry is distinct."""
    w = make_rng(rng_seed).normal(size=x.shape)
    return (x * Tensor(w)).sum()


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Store the verdict line for one acceptance criterion and echo it immediately."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
