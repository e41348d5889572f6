import pytest

# criterion id -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(criterion: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"[{criterion}] {'PASS' if passed else 'FAIL'}: {detail}")
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        passed, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"{criterion} {'PASS' if passed else 'FAIL'}  {detail}")
