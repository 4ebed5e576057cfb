import pytest

from vrfilter import filterbank as fb

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def banks_l1():
    return fb.build_recursive_banks(1, use_closed_form=True)


@pytest.fixture(scope="session")
def banks_l1_numeric():
    return fb.build_recursive_banks(1)


@pytest.fixture(scope="session")
def fixed_bank_l1():
    return fb.build_fixed_bank(1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
