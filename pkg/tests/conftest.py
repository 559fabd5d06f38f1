import pytest

from approxgrad import _kernels
from approxgrad.multlib import build_exact, build_truncated

BACKENDS = _kernels.available_backends()

# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[str, bool] = {}


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def rm7():
    return build_truncated(7, 6)


@pytest.fixture(scope="session")
def rm4():
    return build_truncated(4, 2)


@pytest.fixture(scope="session")
def exact8u():
    return build_exact(8, False)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
