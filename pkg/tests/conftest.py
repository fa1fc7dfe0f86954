import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[number])
