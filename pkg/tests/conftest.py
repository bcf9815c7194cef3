"""Collects one verdict line per acceptance criterion and prints them at the end."""

ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        terminalreporter.write_line(ACCEPTANCE[key])
