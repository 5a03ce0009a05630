"""Prints one PASS/FAIL line per numbered acceptance check at session end."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter):
    verdicts = {}
    for status, ok in (("failed", False), ("error", False), ("skipped", False), ("passed", True)):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", "") or "")
            if match:
                num = int(match.group(1))
                verdicts[num] = verdicts.get(num, True) and ok
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance")
    for num in sorted(verdicts):
        terminalreporter.write_line(
            f"criterion {num}: {'PASS' if verdicts[num] else 'FAIL'}"
        )
