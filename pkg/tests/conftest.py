import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import criteria  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not criteria.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria.RESULTS):
        passed, detail = criteria.RESULTS[number]
        terminalreporter.write_line(f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
