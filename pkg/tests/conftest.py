import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance")
    for rep in _acceptance:
        label = _labels.get(rep.nodeid, rep.nodeid.split("::")[-1])
        status = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"{status}  {label}")


_labels = {}


def pytest_collection_modifyitems(items):
    for item in items:
        doc = getattr(item.function, "__doc__", None)
        if "test_acceptance.py" in item.nodeid and doc:
            _labels[item.nodeid] = doc.strip().splitlines()[0]
