import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}
RESULTS_FILE = Path(__file__).parent / "acceptance_results.txt"


@pytest.fixture
def acceptance_results():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    lines = [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
             for n, (ok, detail) in sorted(_ACCEPTANCE.items())]
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    RESULTS_FILE.write_text("\n".join(lines) + "\n", encoding="utf-8")
