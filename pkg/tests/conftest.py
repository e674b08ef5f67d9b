import warnings

import pytest

from kernelbounds.errors import QuadratureWarning
from kernelbounds.harness.commands import run_solve
from kernelbounds.harness.config import parse_config
from kernelbounds.lyapunov import WeightFamily

POLY_INI = """
[operator]
family = polynomial
m = 2
p = 3
s = 4

[lyapunov]
k = 10
"""

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")
    config.addinivalue_line("markers", "acceptance: acceptance criterion test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    num = getattr(report, "criterion", None)
    if num is None:
        return
    prev = _criteria.get(num)
    ok = report.passed
    _criteria[num] = (prev[0] and ok if prev else ok, getattr(report, "criterion_title", ""))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]
        rep.criterion_title = mark.args[1] if len(mark.args) > 1 else ""


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        ok, title = _criteria[num]
        terminalreporter.write_line(f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def poly_cfg():
    return parse_config(POLY_INI)


@pytest.fixture(scope="session")
def poly_spec(poly_cfg):
    return poly_cfg.build_spec()


@pytest.fixture(scope="session")
def poly_params(poly_cfg, poly_spec):
    return poly_cfg.build_params(poly_spec)


@pytest.fixture(scope="session")
def poly_family(poly_params):
    return WeightFamily.from_params(poly_params)


@pytest.fixture(scope="session")
def poly_field(poly_cfg, poly_spec, poly_params):
    return run_solve(poly_cfg, poly_spec, poly_params)


@pytest.fixture(scope="session")
def poly_coarse(poly_cfg, poly_spec, poly_params):
    return run_solve(poly_cfg, poly_spec, poly_params, scale=2)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureWarning)
        yield
