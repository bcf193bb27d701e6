import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    m = item.get_closest_marker("criterion")
    if m is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    if hasattr(rep, "wasxfail"):
        status = "xfail"
    elif rep.failed:
        status = "fail"
    elif rep.skipped:
        status = "skip"
    else:
        status = "pass"
    _criteria.setdefault(m.args[0], {})[item.name] = status


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        parts = _criteria[n]
        ok = all(s in ("pass", "xfail") for s in parts.values())
        xf = [k for k, s in parts.items() if s == "xfail"]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        if xf:
            line += f"  (strict xfail: {', '.join(xf)})"
        terminalreporter.write_line(line)
