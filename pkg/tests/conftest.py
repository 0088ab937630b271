import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

# criterion number -> list of (passed, detail) from the acceptance tests
ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Collects one-line measurement details for the acceptance summary."""
    notes: list = []
    request.node.acceptance_notes = notes
    return notes.append


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    passed = call.excinfo is None
    note = "; ".join(getattr(item, "acceptance_notes", []))
    if not passed and not note:
        note = str(call.excinfo.value).splitlines()[0][:160]
    ACCEPTANCE.setdefault(marker.args[0], []).append((passed, f"{item.name}: {note}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        results = ACCEPTANCE[n]
        ok = all(p for p, _ in results)
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} | " + " | ".join(d for _, d in results))
