import pytest

from secure_hfl import _kernels_py

try:
    from secure_hfl import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = [pytest.param(_kernels_py, id="numpy")]
if _compiled is not None:
    BACKENDS.append(pytest.param(_compiled, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Each raw kernel module that is importable in this install."""
    return request.param


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(LINES):
        terminalreporter.write_line(LINES[key])
