import numpy as np
import pytest
from hypothesis import settings

from nlsnf.lattice import Lattice
from nlsnf.potential import frequencies, sample_potential, zero_potential

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def lat1():
    return Lattice(1, 6)


@pytest.fixture(scope="session")
def freqs1(lat1):
    return frequencies(sample_potential(2.0, 1.0, lat1, 3))


@pytest.fixture(scope="session")
def flat_freqs():
    """omega_a = a^2 on d=1, K=4."""
    return frequencies(zero_potential(Lattice(1, 4)))


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
