import pytest

from rtosfi.harness import build_system, golden_run
from rtosfi.targets import gather_targets


@pytest.fixture(scope="session")
def golden():
    return golden_run()


@pytest.fixture(scope="session")
def catalog():
    return gather_targets(build_system())


@pytest.fixture
def system():
    """Default system, scheduler not yet started."""
    return build_system()


_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA.append((number, "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {detail}")
