import pytest

# acceptance results collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tuning_bench():
    """Default-size synthetic benchmark used by the tuning tests."""
    from budgetret.bench import build_benchmark
    from budgetret.dataset_io import SyntheticConfig
    return build_benchmark(SyntheticConfig(seed=500))
