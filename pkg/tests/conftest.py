import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one [PASS]/[FAIL] line per acceptance criterion after the run."""
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
