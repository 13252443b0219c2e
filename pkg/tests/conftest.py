import numpy as np
import pytest

from impulsive.builtins import builtin_system


@pytest.fixture(scope="session")
def s1a():
    return builtin_system("S1a")


@pytest.fixture(scope="session")
def s1b():
    return builtin_system("S1b")


@pytest.fixture(scope="session")
def s2():
    return builtin_system("S2")


@pytest.fixture(scope="session")
def s3():
    return builtin_system("S3")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, printed once at the end of the run
CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(n: int, ok: bool, detail: str):
        CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(CRITERIA[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
