"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import re

_ACCEPT_RE = re.compile(r"test_acceptance\.py::test_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    verdicts: dict[int, tuple[str, str]] = {}
    for outcome, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(outcome, []):
            m = _ACCEPT_RE.search(getattr(report, "nodeid", "") or "")
            if not m:
                continue
            number = int(m.group(1))
            if verdict == "FAIL" or number not in verdicts:
                verdicts[number] = (m.group(2).replace("_", " "), verdict)
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance")
    for number in sorted(verdicts):
        name, verdict = verdicts[number]
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} {name:<32} {verdict}")
