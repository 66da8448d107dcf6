import re
from collections import OrderedDict

_acceptance = OrderedDict()


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"::test_(ac\d+)_(\w+?)(\[|$)", report.nodeid)
    if not m:
        return
    key = m.group(1).upper()
    label = m.group(2).replace("_", " ")
    failed = report.failed
    if report.when == "call" or failed:
        first_label, ok = _acceptance.get(key, (label, True))
        _acceptance[key] = (first_label, ok and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda k: int(k[2:])):
        label, ok = _acceptance[key]
        terminalreporter.write_line(f"{key:<5} {'PASS' if ok else 'FAIL'}  {label}")
