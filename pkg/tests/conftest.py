import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    """Store one pass/fail line for the end-of-run criterion summary."""
    CRITERIA.setdefault(criterion, []).append((bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        rows = CRITERIA[k]
        ok = all(p for p, _ in rows)
        bad = [d for p, d in rows if not p]
        extra = f" ({len(rows)} checks)" if ok else f" failing: {'; '.join(bad[:3])}"
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}{extra}")


@pytest.fixture(scope="session")
def scenario_reports():
    """Lazily computed default-configuration scenario reports, keyed by (id, a)."""
    from tolab.experiments import default_config, run_scenario

    cache = {}

    def get(sid: str, a=None):
        key = (sid, a)
        if key not in cache:
            cache[key] = run_scenario(default_config(sid, a=a), write=False)
        return cache[key]

    return get
