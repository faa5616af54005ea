"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    if report.failed:
        detail = detail or str(report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash")
                               else report.longrepr).splitlines()[0]
    _ACCEPTANCE.append(("PASS" if report.passed else "FAIL", marker.args[0], detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag, name, detail in sorted(_ACCEPTANCE, key=lambda r: r[1]):
        terminalreporter.write_line(f"[{tag}] {name}: {detail}")


@pytest.fixture
def record(request):
    """Attach a one-line detail to the current test's acceptance line."""

    def _record(detail: str) -> None:
        request.node.user_properties.append(("detail", detail))

    return _record
