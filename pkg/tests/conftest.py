from __future__ import annotations

import functools

import pytest

from nonlocal_lwr import load_config, run_macro, run_micro

#: criterion id -> (PASS/FAIL/WARN, message), filled by the acceptance tests
ACCEPTANCE_LINES: dict = {}


@functools.lru_cache(maxsize=None)
def _preset_run(name: str):
    cfg = load_config(name)
    if cfg.model == "micro":
        return run_micro(cfg)
    return run_macro(cfg, keep_snapshots=False)


@pytest.fixture(scope="session")
def preset_run():
    """Full-length preset runs, computed once per session."""
    return _preset_run


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        status, msg = ACCEPTANCE_LINES[key]
        terminalreporter.write_line(f"{status} {key}: {msg}")
