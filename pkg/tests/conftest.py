# Shared fixtures live here; support.py next to this file holds plain helpers.

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    # emitted after capture is torn down, so the verdicts survive plain `pytest -v`
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
