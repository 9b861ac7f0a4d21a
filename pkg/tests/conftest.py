import pytest

from timeline_tamp import domain


@pytest.fixture(scope="session")
def mosaic4():
    return domain.generate_mosaic(domain.load_mosaic("mosaic-4"), seed=0)


@pytest.fixture(scope="session")
def mosaic9():
    return domain.generate_mosaic(domain.load_mosaic("mosaic-9"), seed=0)


@pytest.fixture(scope="session")
def mosaic50():
    return domain.generate_mosaic(domain.load_mosaic("mosaic-50"), seed=0)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
