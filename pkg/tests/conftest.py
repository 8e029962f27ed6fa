"""Acceptance reporting: one PASS/FAIL line per criterion in the terminal summary."""

import pytest

_RESULTS: dict[int, dict] = {}


@pytest.fixture
def measured(request):
    """Attach measured values to the current test; shown next to its criterion line."""

    def record(**values):
        request.node.user_properties.extend(values.items())

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    details = ", ".join(f"{k}={_fmt(v)}" for k, v in item.user_properties)
    if details:
        entry["details"].append(details)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        e = _RESULTS[number]
        line = f"criterion {number:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["details"]:
            line += "  |  " + "; ".join(e["details"])
        terminalreporter.write_line(line)
