import pytest

from genofp.pipeline import Dataset
from genofp.synth_data import GeneratorConfig

KEY = b"owner-secret"


@pytest.fixture(scope="session")
def small():
    """60 trios plus 120 singletons over 24 loci."""
    return Dataset.generate(GeneratorConfig(n_families=60, n_individuals=300, n_loci=24, seed=3))


@pytest.fixture(scope="session")
def full_size():
    """1500 rows x 156 loci, default generator settings."""
    return Dataset.generate(GeneratorConfig(seed=7))


_verdicts: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line outcome that is echoed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        _verdicts.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
