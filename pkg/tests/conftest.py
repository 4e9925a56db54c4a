import pytest

# criterion id -> (passed, detail); filled by test_acceptance.py
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(CRITERIA, key=lambda c: int(c[1:])):
        passed, detail = CRITERIA[cid]
        terminalreporter.write_line(f"{cid}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(cid: str, passed: bool, detail: str) -> bool:
        CRITERIA[cid] = (bool(passed), detail)
        print(f"{cid}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)

    return _record
