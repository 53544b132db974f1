import pytest

# (criterion number, title, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")


@pytest.fixture
def record_criterion():
    def record(n, title, ok, detail):
        ACCEPTANCE_RESULTS.append((n, title, bool(ok), detail))
        print(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        return ok

    return record
