"""Prints a one-line verdict per acceptance criterion after the run."""

from __future__ import annotations

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[int, str] = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                number = int(match.group(1))
                if outcome == "passed" and verdicts.get(number):
                    continue  # a setup error outranks a later pass line
                verdicts[number] = outcome.upper()
    if verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for number in sorted(verdicts):
            terminalreporter.write_line(f"criterion {number:2d}: {verdicts[number]}")
