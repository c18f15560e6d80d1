"""Collects acceptance verdicts and prints them as a summary block."""

ACCEPTANCE_RESULTS = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[criterion]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
