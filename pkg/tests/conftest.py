import pytest

# criterion number -> (passed, label, detail); filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, label, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {label}: {detail}")


@pytest.fixture
def record():
    def _record(num, label, ok, detail):
        ACCEPTANCE[num] = (bool(ok), label, detail)
        print(f"[{'PASS' if ok else 'FAIL'}] {num}. {label}: {detail}")
    return _record
