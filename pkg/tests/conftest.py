import pytest

from srosk import demo
from srosk.policy import profile_from_rules


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture(scope="session")
def ca(tmp_path_factory):
    return demo.make_ca(tmp_path_factory.mktemp("ca"), intermediate=True)


@pytest.fixture(scope="session")
def other_ca(tmp_path_factory):
    return demo.make_ca(tmp_path_factory.mktemp("other_ca"))


@pytest.fixture(scope="session")
def demo_keystores(ca, tmp_path_factory):
    return demo.issue_keystores(ca, demo.demo_profiles(), tmp_path_factory.mktemp("demo_ks"))


@pytest.fixture
def issue(ca, tmp_path):
    """issue(name, *rules) -> keystore directory signed by the session CA."""
    counter = iter(range(10 ** 6))

    def _issue(name, *rules, store=None):
        profile = profile_from_rules(name, rules)
        out = tmp_path / f"ks{next(counter)}"
        return demo.issue_keystores(store or ca, {profile.subject: profile}, out)[profile.subject]
    return _issue


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.failed or (report.when == "call" and report.skipped):
        _CRITERIA[number] = (title, "FAIL")
    elif report.when == "call" and number not in _CRITERIA:
        _CRITERIA[number] = (title, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
