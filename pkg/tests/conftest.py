import pytest

from oversight import equilibrium_solver as es
from oversight.model_core import validate_params

P0_DICT = dict(H=1.0, L=1.0, c=0.05, lam=0.5, r=0.1, u=1.0, k=0.1)
BATTERY = [dict(P0_DICT, k=k, u=u) for k in (0.02, 0.05, 0.1) for u in (1.0, 2.0)]

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def P0():
    return validate_params(**P0_DICT)


@pytest.fixture(scope="session")
def p0_solutions(P0):
    return es.solve_all(P0)


@pytest.fixture(scope="session")
def battery():
    return [validate_params(**d) for d in BATTERY]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
