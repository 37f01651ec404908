import pytest

# Lines appended by the acceptance suite, echoed in the terminal summary so
# they appear even when stdout capture is on.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
