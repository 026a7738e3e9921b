from collections import OrderedDict

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            entry = _CRITERIA.setdefault(number, {"title": title, "tests": {}})
            entry["tests"][item.nodeid] = None


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["tests"]:
            if report.failed or (report.when == "call" and report.outcome == "skipped"):
                entry["tests"][report.nodeid] = False
            elif report.when == "call" and entry["tests"][report.nodeid] is None:
                entry["tests"][report.nodeid] = True


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        results = list(entry["tests"].values())
        if any(r is None for r in results):
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        failed = [nid.split("::")[-1] for nid, r in entry["tests"].items() if r is False]
        detail = f" (failing: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number:2d} {status:7s} {entry['title']}{detail}")
