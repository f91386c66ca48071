"""Per-criterion PASS/FAIL summary for the acceptance suite."""

import pytest

_CRITERIA = {}
_OUTCOMES = {}
_DETAILS = {}


@pytest.fixture
def detail(request):
    """Call with a short string to attach measured values to the summary line."""

    def record(text):
        _DETAILS[request.node.nodeid] = text

    return record


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _CRITERIA[item.nodeid] = marker.args


def pytest_runtest_logreport(report):
    # a failing setup or teardown fails the criterion as well
    if report.when == "call" or report.outcome != "passed":
        if _OUTCOMES.get(report.nodeid, "passed") == "passed":
            _OUTCOMES[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    rows = []
    for nodeid, (number, title) in _CRITERIA.items():
        outcome = _OUTCOMES.get(nodeid)
        if outcome is not None:
            status = "PASS" if outcome == "passed" else "FAIL"
            rows.append((number, status, title, _DETAILS.get(nodeid, "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, extra in sorted(rows):
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(f"{line} [{extra}]" if extra else line)
