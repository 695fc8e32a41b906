import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# filled by tests/test_acceptance.py, printed at the end of the session;
# criterion -> [(part, ok, detail)]
ACCEPTANCE_LINES: dict[int, list[tuple[str, bool, str]]] = {}


def acceptance_line(k: int) -> str:
    parts = ACCEPTANCE_LINES[k]
    verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
    body = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({detail})" for name, ok, detail in parts)
    return f"{verdict} criterion {k}: {body}"


def load_fixture(name: str):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture(scope="session")
def fixture_data():
    return load_fixture


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(acceptance_line(k))
