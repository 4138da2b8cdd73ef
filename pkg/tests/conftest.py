import pytest

# criterion name -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: one test per acceptance criterion")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)
